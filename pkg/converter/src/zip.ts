/**
 * Minimal ZIP reader for checkpoint archives.
 *
 * Supports stored and deflate entries, which covers every archive the
 * training framework writes. Zip64 end-of-directory records are handled
 * because archives over 4 GB exist for the larger models.
 */

import { inflateRawSync } from "node:zlib";

export interface ZipEntry {
  name: string;
  data: Buffer;
}

const EOCD_SIG = 0x06054b50;
const EOCD64_LOC_SIG = 0x07064b50;
const EOCD64_SIG = 0x06064b50;
const CENTRAL_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

function findEocd(buf: Buffer): number {
  const min = Math.max(0, buf.length - 65557);
  for (let i = buf.length - 22; i >= min; i--) {
    if (buf.readUInt32LE(i) === EOCD_SIG) return i;
  }
  throw new Error("not a zip archive: end-of-directory record missing");
}

export function readZip(buf: Buffer): Map<string, Buffer> {
  const eocd = findEocd(buf);
  let count = buf.readUInt16LE(eocd + 10);
  let dirOffset: number = buf.readUInt32LE(eocd + 16);

  if (dirOffset === 0xffffffff || count === 0xffff) {
    const locAt = eocd - 20;
    if (locAt < 0 || buf.readUInt32LE(locAt) !== EOCD64_LOC_SIG) {
      throw new Error("zip64 archive without a zip64 locator");
    }
    const eocd64 = Number(buf.readBigUInt64LE(locAt + 8));
    if (buf.readUInt32LE(eocd64) !== EOCD64_SIG) {
      throw new Error("bad zip64 end-of-directory record");
    }
    count = Number(buf.readBigUInt64LE(eocd64 + 32));
    dirOffset = Number(buf.readBigUInt64LE(eocd64 + 48));
  }

  const entries = new Map<string, Buffer>();
  let at = dirOffset;
  for (let i = 0; i < count; i++) {
    if (buf.readUInt32LE(at) !== CENTRAL_SIG) {
      throw new Error("corrupt zip central directory");
    }
    const method = buf.readUInt16LE(at + 10);
    let compressed = buf.readUInt32LE(at + 20);
    const nameLen = buf.readUInt16LE(at + 28);
    const extraLen = buf.readUInt16LE(at + 30);
    const commentLen = buf.readUInt16LE(at + 32);
    let localOffset: number = buf.readUInt32LE(at + 42);
    const name = buf.toString("utf8", at + 46, at + 46 + nameLen);

    if (compressed === 0xffffffff || localOffset === 0xffffffff) {
      // sizes live in the zip64 extra field
      let extraAt = at + 46 + nameLen;
      const extraEnd = extraAt + extraLen;
      while (extraAt + 4 <= extraEnd) {
        const id = buf.readUInt16LE(extraAt);
        const size = buf.readUInt16LE(extraAt + 2);
        if (id === 0x0001) {
          let fieldAt = extraAt + 4;
          const uncompressed = buf.readUInt32LE(at + 24);
          if (uncompressed === 0xffffffff) fieldAt += 8;
          if (compressed === 0xffffffff) {
            compressed = Number(buf.readBigUInt64LE(fieldAt));
            fieldAt += 8;
          }
          if (localOffset === 0xffffffff) {
            localOffset = Number(buf.readBigUInt64LE(fieldAt));
          }
        }
        extraAt += 4 + size;
      }
    }

    if (buf.readUInt32LE(localOffset) !== LOCAL_SIG) {
      throw new Error(`corrupt local header for ${name}`);
    }
    const localNameLen = buf.readUInt16LE(localOffset + 26);
    const localExtraLen = buf.readUInt16LE(localOffset + 28);
    const dataAt = localOffset + 30 + localNameLen + localExtraLen;
    const raw = buf.subarray(dataAt, dataAt + compressed);
    if (method === 0) {
      entries.set(name, raw);
    } else if (method === 8) {
      entries.set(name, inflateRawSync(raw));
    } else {
      throw new Error(`unsupported compression method ${method} for ${name}`);
    }
    at += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}
