/**
 * Small pickle virtual machine.
 *
 * Executes the opcode subset that checkpoint files actually use
 * (protocols 2-4): containers, memoization, globals, REDUCE/NEWOBJ/BUILD
 * object construction and persistent-id references. Unknown classes come
 * back as generic objects carrying their class name and state, so module
 * graphs can be walked without importing the original code.
 */

export interface GlobalRef {
  kind: "global";
  module: string;
  name: string;
}

export interface PObject {
  kind: "object";
  cls: GlobalRef;
  args: unknown[];
  state: Map<string, unknown>;
}

export type Unpickled = unknown;

export function isGlobal(v: unknown, module?: string, name?: string): v is GlobalRef {
  const g = v as GlobalRef;
  if (!g || typeof g !== "object" || g.kind !== "global") return false;
  return (module === undefined || g.module === module) && (name === undefined || g.name === name);
}

export function isObject(v: unknown): v is PObject {
  return !!v && typeof v === "object" && (v as PObject).kind === "object";
}

const MARK = Symbol("mark");

export interface UnpickleHooks {
  /** Called for BINPERSID; the returned value is pushed on the stack. */
  persistent: (pid: unknown) => unknown;
  /** Optional REDUCE/NEWOBJ interception by qualified class name. */
  reduce?: (cls: GlobalRef, args: unknown[]) => unknown | undefined;
}

export function unpickle(buf: Buffer, hooks: UnpickleHooks): Unpickled {
  let pos = 0;
  const stack: unknown[] = [];
  const memo: unknown[] = [];

  const u8 = () => buf[pos++];
  const u16 = () => {
    const v = buf.readUInt16LE(pos);
    pos += 2;
    return v;
  };
  const u32 = () => {
    const v = buf.readUInt32LE(pos);
    pos += 4;
    return v;
  };
  const i32 = () => {
    const v = buf.readInt32LE(pos);
    pos += 4;
    return v;
  };
  const f64 = () => {
    const v = buf.readDoubleBE(pos);
    pos += 8;
    return v;
  };
  const str = (n: number) => {
    const v = buf.toString("utf8", pos, pos + n);
    pos += n;
    return v;
  };
  const line = () => {
    const end = buf.indexOf(0x0a, pos);
    const v = buf.toString("utf8", pos, end);
    pos = end + 1;
    return v;
  };
  const popMark = (): unknown[] => {
    const idx = stack.lastIndexOf(MARK);
    if (idx < 0) throw new Error("pickle stack has no mark");
    const items = stack.splice(idx + 1);
    stack.pop();
    return items;
  };

  const construct = (cls: GlobalRef, args: unknown[]): unknown => {
    const hooked = hooks.reduce?.(cls, args);
    if (hooked !== undefined) return hooked;
    const qualified = `${cls.module}.${cls.name}`;
    if (qualified === "collections.OrderedDict") return new Map();
    if (qualified === "torch._utils._rebuild_parameter") return args[0];
    if (qualified === "torch.Size") return args[0];
    const obj: PObject = { kind: "object", cls, args, state: new Map() };
    return obj;
  };

  for (;;) {
    const op = u8();
    switch (op) {
      case 0x80: // PROTO
        u8();
        break;
      case 0x95: // FRAME
        pos += 8;
        break;
      case 0x2e: // STOP
        return stack.pop();

      case 0x28: // MARK
        stack.push(MARK);
        break;
      case 0x4e: // NONE
        stack.push(null);
        break;
      case 0x88: // NEWTRUE
        stack.push(true);
        break;
      case 0x89: // NEWFALSE
        stack.push(false);
        break;

      case 0x4a: // BININT
        stack.push(i32());
        break;
      case 0x4b: // BININT1
        stack.push(u8());
        break;
      case 0x4d: // BININT2
        stack.push(u16());
        break;
      case 0x8a: {
        // LONG1
        const n = u8();
        let v = 0n;
        for (let i = n - 1; i >= 0; i--) v = (v << 8n) | BigInt(buf[pos + i]);
        if (n > 0 && buf[pos + n - 1] & 0x80) v -= 1n << BigInt(8 * n);
        pos += n;
        stack.push(v <= BigInt(Number.MAX_SAFE_INTEGER) && v >= BigInt(Number.MIN_SAFE_INTEGER) ? Number(v) : v);
        break;
      }
      case 0x47: // BINFLOAT
        stack.push(f64());
        break;

      case 0x58: // BINUNICODE
        stack.push(str(u32()));
        break;
      case 0x8c: // SHORT_BINUNICODE
        stack.push(str(u8()));
        break;
      case 0x55: // SHORT_BINSTRING
        stack.push(str(u8()));
        break;
      case 0x54: // BINSTRING
        stack.push(str(u32()));
        break;
      case 0x43: {
        // SHORT_BINBYTES
        const n = u8();
        stack.push(buf.subarray(pos, pos + n));
        pos += n;
        break;
      }
      case 0x42: {
        // BINBYTES
        const n = u32();
        stack.push(buf.subarray(pos, pos + n));
        pos += n;
        break;
      }

      case 0x5d: // EMPTY_LIST
        stack.push([]);
        break;
      case 0x7d: // EMPTY_DICT
        stack.push(new Map());
        break;
      case 0x29: // EMPTY_TUPLE
        stack.push([]);
        break;
      case 0x85: // TUPLE1
        stack.push(stack.splice(-1));
        break;
      case 0x86: // TUPLE2
        stack.push(stack.splice(-2));
        break;
      case 0x87: // TUPLE3
        stack.push(stack.splice(-3));
        break;
      case 0x74: // TUPLE
        stack.push(popMark());
        break;

      case 0x61: {
        // APPEND
        const v = stack.pop();
        (stack[stack.length - 1] as unknown[]).push(v);
        break;
      }
      case 0x65: {
        // APPENDS
        const items = popMark();
        (stack[stack.length - 1] as unknown[]).push(...items);
        break;
      }
      case 0x73: {
        // SETITEM
        const v = stack.pop();
        const k = stack.pop();
        (stack[stack.length - 1] as Map<unknown, unknown>).set(k, v);
        break;
      }
      case 0x75: {
        // SETITEMS
        const items = popMark();
        const dict = stack[stack.length - 1] as Map<unknown, unknown>;
        for (let i = 0; i < items.length; i += 2) dict.set(items[i], items[i + 1]);
        break;
      }

      case 0x71: // BINPUT
        memo[u8()] = stack[stack.length - 1];
        break;
      case 0x72: // LONG_BINPUT
        memo[u32()] = stack[stack.length - 1];
        break;
      case 0x94: // MEMOIZE
        memo.push(stack[stack.length - 1]);
        break;
      case 0x68: // BINGET
        stack.push(memo[u8()]);
        break;
      case 0x6a: // LONG_BINGET
        stack.push(memo[u32()]);
        break;

      case 0x63: // GLOBAL
        stack.push({ kind: "global", module: line(), name: line() } satisfies GlobalRef);
        break;
      case 0x93: {
        // STACK_GLOBAL
        const name = stack.pop() as string;
        const module = stack.pop() as string;
        stack.push({ kind: "global", module, name } satisfies GlobalRef);
        break;
      }

      case 0x52: {
        // REDUCE
        const args = stack.pop() as unknown[];
        const cls = stack.pop() as GlobalRef;
        stack.push(construct(cls, args));
        break;
      }
      case 0x81: {
        // NEWOBJ
        const args = stack.pop() as unknown[];
        const cls = stack.pop() as GlobalRef;
        stack.push(construct(cls, args));
        break;
      }
      case 0x62: {
        // BUILD
        const state = stack.pop();
        const target = stack[stack.length - 1];
        if (isObject(target)) {
          const dictState = Array.isArray(state) ? state[0] : state;
          if (dictState instanceof Map) {
            for (const [k, v] of dictState) target.state.set(String(k), v);
          }
        } else if (target instanceof Map && state instanceof Map) {
          for (const [k, v] of state) target.set(k, v);
        }
        break;
      }
      case 0x51: // BINPERSID
        stack.push(hooks.persistent(stack.pop()));
        break;

      default:
        throw new Error(`unsupported pickle opcode 0x${op.toString(16)} at offset ${pos - 1}`);
    }
  }
}
