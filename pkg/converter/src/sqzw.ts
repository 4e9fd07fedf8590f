/**
 * Writer for the engine's portable model container ("SQZW", version 1).
 *
 * Layout (little-endian): magic, u32 version, config block (u32 fields with
 * two u8 flags), u32 tensor count, then per tensor: u16 name length, UTF-8
 * name, u8 rank, u32 dims, raw float32 payload.
 */

import { Tensor } from "./torch.js";

export const FORMAT_VERSION = 1;

export interface EngineConfig {
  sample_rate: number;
  group_size: number;
  n_flows: number;
  n_early_every: number;
  n_early_size: number;
  wn_layers: number;
  wn_width: number;
  wn_kernel: number;
  variant: "waveglow" | "squeezewave";
  cond_before_upsample: boolean;
  n_mels: number;
  hop: number;
  window_samples: number;
  upsample_kernel: number;
}

export function packModel(config: EngineConfig, tensors: [string, Tensor][]): Buffer {
  const chunks: Buffer[] = [];
  const u32 = (v: number) => {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v >>> 0);
    chunks.push(b);
  };
  const u16 = (v: number) => {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(v);
    chunks.push(b);
  };
  const u8 = (v: number) => {
    chunks.push(Buffer.from([v & 0xff]));
  };

  chunks.push(Buffer.from("SQZW", "ascii"));
  u32(FORMAT_VERSION);
  u32(config.sample_rate);
  u32(config.group_size);
  u32(config.n_flows);
  u32(config.n_early_every);
  u32(config.n_early_size);
  u32(config.wn_layers);
  u32(config.wn_width);
  u32(config.wn_kernel);
  u8(config.variant === "waveglow" ? 0 : 1);
  u8(config.cond_before_upsample ? 1 : 0);
  u32(config.n_mels);
  u32(config.hop);
  u32(config.window_samples);
  u32(config.upsample_kernel);

  u32(tensors.length);
  for (const [name, tensor] of tensors) {
    const encoded = Buffer.from(name, "utf8");
    u16(encoded.length);
    chunks.push(encoded);
    u8(tensor.shape.length);
    for (const dim of tensor.shape) u32(dim);
    const payload = Buffer.alloc(4 * tensor.data.length);
    for (let i = 0; i < tensor.data.length; i++) payload.writeFloatLE(tensor.data[i], 4 * i);
    chunks.push(payload);
  }
  return Buffer.concat(chunks);
}

/** Reader used by the converter's own tests. */
export function unpackModel(buf: Buffer): { config: EngineConfig; tensors: Map<string, Tensor> } {
  if (buf.toString("ascii", 0, 4) !== "SQZW") throw new Error("bad magic");
  let at = 4;
  const u32 = () => {
    const v = buf.readUInt32LE(at);
    at += 4;
    return v;
  };
  const version = u32();
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const words = [u32(), u32(), u32(), u32(), u32(), u32(), u32(), u32()];
  const variant = buf[at++] === 0 ? "waveglow" : "squeezewave";
  const cond_before_upsample = buf[at++] !== 0;
  const tail = [u32(), u32(), u32(), u32()];
  const config: EngineConfig = {
    sample_rate: words[0],
    group_size: words[1],
    n_flows: words[2],
    n_early_every: words[3],
    n_early_size: words[4],
    wn_layers: words[5],
    wn_width: words[6],
    wn_kernel: words[7],
    variant,
    cond_before_upsample,
    n_mels: tail[0],
    hop: tail[1],
    window_samples: tail[2],
    upsample_kernel: tail[3],
  };
  const tensors = new Map<string, Tensor>();
  const count = u32();
  for (let i = 0; i < count; i++) {
    const nameLen = buf.readUInt16LE(at);
    at += 2;
    const name = buf.toString("utf8", at, at + nameLen);
    at += nameLen;
    const rank = buf[at++];
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) shape.push(u32());
    const count = shape.reduce((a, b) => a * b, 1);
    const data = new Float32Array(count);
    for (let j = 0; j < count; j++) data[j] = buf.readFloatLE(at + 4 * j);
    at += 4 * count;
    tensors.set(name, { shape, data });
  }
  return { config, tensors };
}
