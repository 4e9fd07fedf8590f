/**
 * Checkpoint converter command line.
 *
 * Usage:
 *   node dist/cli.js convert <checkpoint.pt> <out.sqzw> [--set key=value ...]
 *
 * --set overrides inferred configuration fields that a checkpoint cannot
 * carry (hop, window_samples, sample_rate, cond_before_upsample, ...).
 */

import { writeFileSync } from "node:fs";

import { Overrides, mapCheckpoint } from "./namemap.js";
import { packModel } from "./sqzw.js";
import { loadCheckpoint } from "./torch.js";

function parseOverrides(argv: string[]): Overrides {
  const overrides: Overrides = {};
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] !== "--set") throw new Error(`unknown argument ${argv[i]}`);
    const pair = argv[++i];
    if (!pair || !pair.includes("=")) throw new Error("--set expects key=value");
    const [key, value] = pair.split("=", 2);
    if (value === "true" || value === "false") {
      overrides[key] = value === "true";
    } else if (/^-?\d+$/.test(value)) {
      overrides[key] = Number(value);
    } else {
      overrides[key] = value;
    }
  }
  return overrides;
}

export function convert(input: string, output: string, overrides: Overrides): void {
  const checkpoint = loadCheckpoint(input);
  const conversion = mapCheckpoint(checkpoint, overrides);
  writeFileSync(output, packModel(conversion.config, conversion.tensors));

  const cfg = conversion.config;
  console.log(`wrote ${output} (${conversion.tensors.length} tensors)`);
  console.log(
    `inferred config: variant=${cfg.variant} group_size=${cfg.group_size} ` +
      `n_flows=${cfg.n_flows} early=(${cfg.n_early_every},${cfg.n_early_size}) ` +
      `wn=${cfg.wn_width}x${cfg.wn_layers} K=${cfg.wn_kernel} n_mels=${cfg.n_mels} ` +
      `hop=${cfg.hop} window=${cfg.window_samples} upsample_kernel=${cfg.upsample_kernel} ` +
      `cond_before_upsample=${cfg.cond_before_upsample}`
  );
  console.log(
    `conditioning projections: ${conversion.report.condStyle}; ` +
      `in_layers: ${conversion.report.inLayerStyle}; ` +
      `weight-norm pairs fused: ${conversion.report.fusedWeightNorms}`
  );
  for (const name of conversion.report.dropped) {
    console.log(`dropped: ${name}`);
  }
}

export function main(argv: string[]): number {
  try {
    if (argv[0] !== "convert" || argv.length < 3) {
      console.error("usage: convert <checkpoint.pt> <out.sqzw> [--set key=value ...]");
      return 2;
    }
    convert(argv[1], argv[2], parseOverrides(argv.slice(3)));
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!)) {
  process.exit(main(process.argv.slice(2)));
}
