/**
 * Maps checkpoint tensor names onto the engine's canonical schema and
 * infers the model configuration from tensor shapes.
 *
 * Source layouts handled:
 *  - flows as convinv.{k} (+ .conv) and WN.{k} subtrees
 *  - fused conditioning (WN.k.cond_layer) or one projection per layer
 *    (WN.k.cond_layers.{j}), which get concatenated
 *  - dense or depthwise-separable in_layers, classified by tensor shape
 *  - the source end projection emits (t, log_s); the canonical order is
 *    (log_s, t), so its output channels are swapped here
 *
 * Every source tensor must end up mapped, fused, or explicitly reported as
 * dropped; anything else is an error.
 */

import { fuseAll } from "./fuse.js";
import { EngineConfig } from "./sqzw.js";
import { Checkpoint, Tensor } from "./torch.js";

export interface ConversionReport {
  condStyle: "fused" | "per-layer";
  fusedWeightNorms: number;
  dropped: string[];
  inLayerStyle: "dense" | "separable";
}

export interface Conversion {
  config: EngineConfig;
  tensors: [string, Tensor][];
  report: ConversionReport;
}

export interface Overrides {
  [key: string]: number | boolean | string;
}

class Flow {
  inv?: Tensor;
  start = new Map<string, Tensor>();
  end = new Map<string, Tensor>();
  condFused = new Map<string, Tensor>();
  condPerLayer = new Map<number, Map<string, Tensor>>();
  inLayers = new Map<number, Map<string, Tensor>>();
  resSkip = new Map<number, Map<string, Tensor>>();
}

function sub(map: Map<number, Map<string, Tensor>>, idx: number): Map<string, Tensor> {
  let m = map.get(idx);
  if (!m) map.set(idx, (m = new Map()));
  return m;
}

function parseFlows(tensors: Map<string, Tensor>, dropped: string[]): {
  flows: Map<number, Flow>;
  upsample: Map<string, Tensor>;
  unmapped: string[];
} {
  const flows = new Map<number, Flow>();
  const upsample = new Map<string, Tensor>();
  const unmapped: string[] = [];
  const flow = (k: number) => {
    let f = flows.get(k);
    if (!f) flows.set(k, (f = new Flow()));
    return f;
  };

  for (const [name, tensor] of tensors) {
    let m: RegExpMatchArray | null;
    if ((m = name.match(/^upsample\.(weight|bias)$/))) {
      upsample.set(m[1], tensor);
    } else if ((m = name.match(/^convinv\.(\d+)(?:\.conv)?\.weight$/))) {
      flow(+m[1]).inv = tensor;
    } else if ((m = name.match(/^WN\.(\d+)\.start\.(weight|bias)$/))) {
      flow(+m[1]).start.set(m[2], tensor);
    } else if ((m = name.match(/^WN\.(\d+)\.end\.(weight|bias)$/))) {
      flow(+m[1]).end.set(m[2], tensor);
    } else if ((m = name.match(/^WN\.(\d+)\.cond_layer\.(weight|bias)$/))) {
      flow(+m[1]).condFused.set(m[2], tensor);
    } else if ((m = name.match(/^WN\.(\d+)\.cond_layers\.(\d+)\.(weight|bias)$/))) {
      sub(flow(+m[1]).condPerLayer, +m[2]).set(m[3], tensor);
    } else if ((m = name.match(/^WN\.(\d+)\.in_layers\.(\d+)\.(.+)$/))) {
      sub(flow(+m[1]).inLayers, +m[2]).set(m[3], tensor);
    } else if ((m = name.match(/^WN\.(\d+)\.res_skip_layers\.(\d+)\.(weight|bias)$/))) {
      sub(flow(+m[1]).resSkip, +m[2]).set(m[3], tensor);
    } else {
      unmapped.push(name);
    }
  }
  return { flows, upsample, unmapped };
}

interface InLayer {
  style: "dense" | "separable";
  tensors: Map<string, Tensor>; // canonical suffix -> tensor
  kernel: number;
}

function classifyInLayer(flowIdx: number, layerIdx: number, group: Map<string, Tensor>): InLayer {
  const where = `WN.${flowIdx}.in_layers.${layerIdx}`;
  const weights: Tensor[] = [];
  const biases: Tensor[] = [];
  for (const [, t] of group) {
    (t.shape.length >= 2 ? weights : biases).push(t);
  }
  if (weights.length === 1) {
    const w = weights[0];
    if (biases.length > 1) throw new Error(`${where}: too many bias tensors`);
    const bias = biases[0] ?? { shape: [w.shape[0]], data: new Float32Array(w.shape[0]) };
    return {
      style: "dense",
      kernel: w.shape[2],
      tensors: new Map([
        ["weight", w],
        ["bias", bias],
      ]),
    };
  }
  if (weights.length === 2) {
    // depthwise (C, 1, K) plus pointwise (C2, C, 1), in either order
    const dw = weights.find((t) => t.shape.length === 3 && t.shape[1] === 1 && t.shape[2] > 1);
    const pw = weights.find((t) => t.shape.length === 3 && t.shape[2] === 1 && t.shape[1] > 1);
    if (!dw || !pw) throw new Error(`${where}: cannot classify separable convolution shapes`);
    const channels = dw.shape[0];
    const out = pw.shape[0];
    const dwBias = biases.find((b) => b.shape[0] === channels);
    const pwBias = biases.find((b) => b.shape[0] === out);
    return {
      style: "separable",
      kernel: dw.shape[2],
      tensors: new Map([
        ["dw_weight", { shape: [channels, dw.shape[2]], data: dw.data }],
        ["dw_bias", dwBias ?? { shape: [channels], data: new Float32Array(channels) }],
        ["pw_weight", { shape: [out, pw.shape[1]], data: pw.data }],
        ["pw_bias", pwBias ?? { shape: [out], data: new Float32Array(out) }],
      ]),
    };
  }
  throw new Error(`${where}: expected one or two weight tensors, found ${weights.length}`);
}

function swapEndHalves(t: Tensor): Tensor {
  const [rows, ...rest] = t.shape;
  const half = rows / 2;
  const per = t.data.length / rows;
  const out = new Float32Array(t.data.length);
  out.set(t.data.subarray(half * per), 0); // log_s rows first
  out.set(t.data.subarray(0, half * per), half * per);
  return { shape: [rows, ...rest], data: out };
}

function concatRows(parts: Tensor[]): Tensor {
  const rest = parts[0].shape.slice(1);
  let rows = 0;
  let total = 0;
  for (const p of parts) {
    rows += p.shape[0];
    total += p.data.length;
  }
  const out = new Float32Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p.data, at);
    at += p.data.length;
  }
  return { shape: [rows, ...rest], data: out };
}

function inferEarlySchedule(sides: number[]): { every: number; size: number } {
  const drops: number[] = [];
  let size = 0;
  for (let i = 1; i < sides.length; i++) {
    if (sides[i] !== sides[i - 1]) {
      drops.push(i);
      const d = sides[i - 1] - sides[i];
      if (d <= 0 || (size && d !== size)) {
        throw new Error(`irregular channel schedule across flows: ${sides.join(",")}`);
      }
      size = d;
    }
  }
  if (!drops.length) return { every: 0, size: 0 };
  const every = drops[0];
  for (let i = every; i < sides.length; i += every) {
    if (!drops.includes(i)) throw new Error(`channel drops are not periodic: ${sides.join(",")}`);
  }
  if (drops.some((d) => d % every !== 0)) {
    throw new Error(`channel drops are not periodic: ${sides.join(",")}`);
  }
  return { every, size };
}

export function mapCheckpoint(checkpoint: Checkpoint, overrides: Overrides = {}): Conversion {
  const tensors = new Map(checkpoint.tensors);
  const { fused } = fuseAll(tensors);
  const dropped: string[] = [];
  const { flows, upsample, unmapped } = parseFlows(tensors, dropped);
  if (unmapped.length) {
    throw new Error(`unmapped source tensors: ${unmapped.sort().join(", ")}`);
  }
  if (!flows.size) throw new Error("checkpoint contains no flow steps");

  const nFlows = flows.size;
  const sides: number[] = [];
  for (let k = 0; k < nFlows; k++) {
    const f = flows.get(k);
    if (!f || !f.inv) throw new Error(`flow ${k}: missing tensors (found flows 0..${nFlows - 1})`);
    sides.push(f.inv.shape[0]);
  }
  const { every, size } = inferEarlySchedule(sides);

  const first = flows.get(0)!;
  const width = first.start.get("weight")!.shape[0];
  const nLayers = first.inLayers.size;
  const inLayer0 = classifyInLayer(0, 0, sub(first.inLayers, 0));
  const condIn = (first.condFused.get("weight") ?? sub(first.condPerLayer, 0).get("weight"))!
    .shape[1];
  const condStyle: "fused" | "per-layer" = first.condFused.size ? "fused" : "per-layer";

  const variant = inLayer0.style === "separable" ? "squeezewave" : "waveglow";
  let nMels: number;
  let upsampleKernel = 0;
  if (variant === "waveglow") {
    if (!upsample.get("weight")) {
      throw new Error("waveglow-style checkpoint is missing its upsampler weights");
    }
    nMels = upsample.get("weight")!.shape[0];
    upsampleKernel = upsample.get("weight")!.shape[2];
    if (condIn !== nMels * sides[0]) {
      throw new Error(
        `conditioning input of ${condIn} channels does not equal n_mels * group_size = ${nMels * sides[0]}`
      );
    }
  } else {
    nMels = condIn;
    for (const key of upsample.keys()) {
      dropped.push(`upsample.${key} (nearest-neighbor conditioning needs no taps)`);
    }
  }

  let hop = 256;
  const upsampleAttrs = checkpoint.moduleAttrs.get("upsample");
  const stride = upsampleAttrs?.get("stride");
  if (Array.isArray(stride) && typeof stride[0] === "number") hop = stride[0];

  const config: EngineConfig = {
    sample_rate: 22050,
    group_size: sides[0],
    n_flows: nFlows,
    n_early_every: every,
    n_early_size: size,
    wn_layers: nLayers,
    wn_width: width,
    wn_kernel: inLayer0.kernel,
    variant,
    cond_before_upsample: false,
    n_mels: nMels,
    hop,
    window_samples: variant === "waveglow" ? 16000 : 16384,
    upsample_kernel: upsampleKernel,
  };
  for (const [key, value] of Object.entries(overrides)) {
    if (!(key in config)) throw new Error(`unknown config override ${key}`);
    (config as unknown as Record<string, unknown>)[key] = value;
  }
  if (variant === "squeezewave" && overrides.cond_before_upsample === undefined) {
    config.cond_before_upsample = config.hop > config.group_size;
  }

  const out: [string, Tensor][] = [];
  const expect = (cond: boolean, msg: string) => {
    if (!cond) throw new Error(msg);
  };
  for (let k = 0; k < nFlows; k++) {
    const f = flows.get(k)!;
    const side = sides[k];
    const half = side / 2;
    expect(f.inv!.data.length === side * side, `flow ${k}: 1x1 weight is not square`);
    out.push([`flow${k}.inv1x1.W`, { shape: [side, side], data: f.inv!.data }]);

    const start = f.start;
    expect(start.has("weight") && start.has("bias"), `flow ${k}: start tensors missing`);
    expect(
      start.get("weight")!.shape[1] === half && start.get("weight")!.shape[0] === width,
      `flow ${k}: start projection shape disagrees with the channel schedule`
    );
    out.push([`flow${k}.wn.start.weight`, start.get("weight")!]);
    out.push([`flow${k}.wn.start.bias`, start.get("bias")!]);

    expect(f.inLayers.size === nLayers, `flow ${k}: expected ${nLayers} in_layers`);
    for (let j = 0; j < nLayers; j++) {
      const layer = classifyInLayer(k, j, sub(f.inLayers, j));
      expect(layer.style === inLayer0.style, `flow ${k}: mixed in_layer styles`);
      for (const [suffix, tensor] of layer.tensors) {
        out.push([`flow${k}.wn.in${j}.${suffix}`, tensor]);
      }
    }

    let condWeight: Tensor;
    let condBias: Tensor;
    if (f.condFused.size) {
      condWeight = f.condFused.get("weight")!;
      condBias = f.condFused.get("bias")!;
    } else {
      expect(f.condPerLayer.size === nLayers, `flow ${k}: expected ${nLayers} cond projections`);
      const ws: Tensor[] = [];
      const bs: Tensor[] = [];
      for (let j = 0; j < nLayers; j++) {
        const c = sub(f.condPerLayer, j);
        ws.push(c.get("weight")!);
        bs.push(c.get("bias")!);
      }
      condWeight = concatRows(ws);
      condBias = concatRows(bs);
    }
    expect(
      condWeight.shape[0] === 2 * width * nLayers && condWeight.shape[1] === condIn,
      `flow ${k}: conditioning projection has unexpected shape`
    );
    out.push([`flow${k}.wn.cond.weight`, condWeight]);
    out.push([`flow${k}.wn.cond.bias`, condBias]);

    expect(f.resSkip.size === nLayers, `flow ${k}: expected ${nLayers} res_skip layers`);
    for (let j = 0; j < nLayers; j++) {
      const r = sub(f.resSkip, j);
      out.push([`flow${k}.wn.res_skip${j}.weight`, r.get("weight")!]);
      out.push([`flow${k}.wn.res_skip${j}.bias`, r.get("bias")!]);
    }

    const endWeight = f.end.get("weight");
    const endBias = f.end.get("bias");
    expect(!!endWeight && !!endBias, `flow ${k}: end tensors missing`);
    expect(endWeight!.shape[0] === 2 * half, `flow ${k}: end projection width mismatch`);
    out.push([`flow${k}.wn.end.weight`, swapEndHalves(endWeight!)]);
    out.push([`flow${k}.wn.end.bias`, swapEndHalves(endBias!)]);
  }

  if (variant === "waveglow") {
    out.push(["upsample.weight", upsample.get("weight")!]);
    const bias = upsample.get("bias") ?? {
      shape: [nMels],
      data: new Float32Array(nMels),
    };
    out.push(["upsample.bias", bias]);
  }

  return {
    config,
    tensors: out,
    report: {
      condStyle,
      fusedWeightNorms: fused,
      dropped,
      inLayerStyle: inLayer0.style,
    },
  };
}
