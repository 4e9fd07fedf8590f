/**
 * Checkpoint archive loading: locate the pickled object graph, materialize
 * float32 tensors from their storage blobs, and flatten module graphs or
 * plain state dicts into dotted tensor names.
 */

import { readFileSync } from "node:fs";

import { GlobalRef, PObject, isGlobal, isObject, unpickle } from "./pickle.js";
import { readZip } from "./zip.js";

export interface Tensor {
  shape: number[];
  data: Float32Array;
}

interface StorageRef {
  kind: "storage";
  dtype: string;
  key: string;
  numel: number;
}

interface TensorRef {
  kind: "tensor";
  storage: StorageRef;
  offset: number;
  shape: number[];
  stride: number[];
}

export interface Checkpoint {
  tensors: Map<string, Tensor>;
  /** plain (non-tensor) attributes of module objects, by module path */
  moduleAttrs: Map<string, Map<string, unknown>>;
}

function isTensorRef(v: unknown): v is TensorRef {
  return !!v && typeof v === "object" && (v as TensorRef).kind === "tensor";
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function contiguousStride(shape: number[]): number[] {
  const stride = new Array<number>(shape.length);
  let acc = 1;
  for (let i = shape.length - 1; i >= 0; i--) {
    stride[i] = acc;
    acc *= shape[i];
  }
  return stride;
}

export function loadCheckpoint(path: string): Checkpoint {
  const archive = readZip(readFileSync(path));
  let pklName: string | undefined;
  for (const name of archive.keys()) {
    if (name.endsWith("/data.pkl") || name === "data.pkl") pklName = name;
  }
  if (!pklName) throw new Error(`${path}: no data.pkl in archive; not a checkpoint file`);
  const prefix = pklName.slice(0, pklName.length - "data.pkl".length);

  const root = unpickle(archive.get(pklName)!, {
    persistent: (pid) => {
      if (!Array.isArray(pid) || pid[0] !== "storage") {
        throw new Error("unsupported persistent reference in checkpoint");
      }
      const [, storageType, key, , nel] = pid as [string, GlobalRef, string, string, number];
      return {
        kind: "storage",
        dtype: isGlobal(storageType) ? storageType.name : String(storageType),
        key,
        numel: nel,
      } satisfies StorageRef;
    },
    reduce: (cls, args) => {
      if (cls.module === "torch._utils" && cls.name === "_rebuild_tensor_v2") {
        const [storage, offset, shape, stride] = args as [StorageRef, number, number[], number[]];
        return { kind: "tensor", storage, offset, shape: [...shape], stride: [...stride] } satisfies TensorRef;
      }
      return undefined;
    },
  });

  const materialize = (ref: TensorRef, name: string): Tensor => {
    if (ref.storage.dtype !== "FloatStorage") {
      throw new Error(`${name}: unsupported tensor dtype ${ref.storage.dtype} (float32 only)`);
    }
    const want = contiguousStride(ref.shape);
    if (ref.shape.length > 0 && ref.stride.join(",") !== want.join(",")) {
      throw new Error(`${name}: non-contiguous tensor layout is not supported`);
    }
    const blob = archive.get(`${prefix}data/${ref.storage.key}`);
    if (!blob) throw new Error(`${name}: storage blob ${ref.storage.key} missing from archive`);
    const count = numel(ref.shape);
    const bytes = blob.subarray(4 * ref.offset, 4 * (ref.offset + count));
    if (bytes.length !== 4 * count) {
      throw new Error(`${name}: storage blob ${ref.storage.key} is truncated`);
    }
    // copy out of the Buffer so alignment is guaranteed
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = bytes.readFloatLE(4 * i);
    return { shape: ref.shape, data };
  };

  const tensors = new Map<string, Tensor>();
  const moduleAttrs = new Map<string, Map<string, unknown>>();

  const walkModule = (obj: PObject, path: string) => {
    const attrs = new Map<string, unknown>();
    for (const [key, value] of obj.state) {
      if (key === "_parameters" || key === "_buffers") {
        if (value instanceof Map) {
          for (const [pname, pval] of value) {
            if (isTensorRef(pval)) {
              tensors.set(path ? `${path}.${pname}` : String(pname), materialize(pval, `${path}.${pname}`));
            }
          }
        }
      } else if (key === "_modules") {
        if (value instanceof Map) {
          for (const [mname, mod] of value) {
            if (isObject(mod)) walkModule(mod, path ? `${path}.${mname}` : String(mname));
          }
        }
      } else if (!String(key).startsWith("_")) {
        attrs.set(String(key), value);
      }
    }
    if (attrs.size) moduleAttrs.set(path, attrs);
  };

  const walkStateDict = (dict: Map<unknown, unknown>) => {
    for (const [key, value] of dict) {
      if (isTensorRef(value)) tensors.set(String(key), materialize(value, String(key)));
    }
  };

  let model: unknown = root;
  if (root instanceof Map) {
    for (const key of ["model", "state_dict", "model_state_dict"]) {
      if (root.has(key)) {
        model = root.get(key);
        break;
      }
    }
  }
  if (isObject(model)) {
    walkModule(model, "");
  } else if (model instanceof Map) {
    walkStateDict(model);
  } else {
    throw new Error(`${path}: checkpoint holds neither a module graph nor a state dict`);
  }
  if (tensors.size === 0) {
    throw new Error(`${path}: no tensors found in checkpoint`);
  }
  return { tensors, moduleAttrs };
}
