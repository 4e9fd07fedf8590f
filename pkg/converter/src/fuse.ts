/**
 * Weight-normalization fusion: checkpoints of this family store most
 * convolutions as a direction tensor v and a per-output-channel magnitude
 * g; plain inference weights are w[o] = g[o] * v[o] / ||v[o]||.
 */

import { Tensor } from "./torch.js";

export function fuseWeightNorm(g: Tensor, v: Tensor): Tensor {
  const outChannels = v.shape[0];
  const per = v.data.length / outChannels;
  if (g.data.length !== outChannels) {
    throw new Error(
      `weight-norm magnitude has ${g.data.length} values for ${outChannels} output channels`
    );
  }
  const out = new Float32Array(v.data.length);
  for (let o = 0; o < outChannels; o++) {
    let sumSq = 0;
    for (let i = o * per; i < (o + 1) * per; i++) sumSq += v.data[i] * v.data[i];
    const norm = Math.sqrt(sumSq);
    if (norm === 0) {
      throw new Error(`weight-norm direction for output channel ${o} has zero norm`);
    }
    const scale = g.data[o] / norm;
    for (let i = o * per; i < (o + 1) * per; i++) out[i] = v.data[i] * scale;
  }
  return { shape: [...v.shape], data: out };
}

/** Fuse every (prefix.weight_g, prefix.weight_v) pair into prefix.weight. */
export function fuseAll(tensors: Map<string, Tensor>): { fused: number } {
  let fused = 0;
  for (const name of [...tensors.keys()]) {
    if (!name.endsWith(".weight_v")) continue;
    const prefix = name.slice(0, -".weight_v".length);
    const gName = `${prefix}.weight_g`;
    const g = tensors.get(gName);
    if (!g) throw new Error(`${name} has no matching ${gName}`);
    tensors.set(`${prefix}.weight`, fuseWeightNorm(g, tensors.get(name)!));
    tensors.delete(name);
    tensors.delete(gName);
    fused++;
  }
  return { fused };
}
