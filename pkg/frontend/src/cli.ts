/**
 * Typed wrapper around the `rosa` command-line interface.
 *
 * All heavy work stays on the Python side; this class shells out, maps the
 * CLI's exit-code contract (0 success, 1 failed check, 2 configuration
 * error) onto typed errors, and parses the file and stdout formats.
 */

import { spawnSync } from "node:child_process";
import { readFileSync } from "node:fs";
import { I32Tensor, readI32Tensor } from "./stream.js";
import {
  BenchRow,
  EpochMetrics,
  SymbolStatsReport,
  parseBenchCsv,
  parseJsonlMetrics,
  parseStatsJson,
} from "./metrics.js";

export class CliConfigError extends Error {}
export class CliFailedCheckError extends Error {}

export interface RosaCliOptions {
  /** command used to launch the CLI; defaults to ["python3", "-m", "rosa.cli"] */
  command?: string[];
  cwd?: string;
  /** value for the ROSA_WORKERS fallback env var */
  workers?: number;
  timeoutMs?: number;
}

export interface RetrieveRequest {
  queriesPath: string;
  keysPath: string;
  outPrefix: string;
  workers?: number;
  engine?: "auto" | "python" | "numba";
  configPath?: string;
}

export interface RetrieveResult {
  tau: I32Tensor;
  mask: I32Tensor;
  tauCf: I32Tensor;
  ridxCf: I32Tensor;
}

export interface MqarRequest {
  mode?: "post_attn" | "pre_attn" | "window_only" | "global";
  dim?: number;
  seqLen?: number;
  window?: number;
  routeBits?: number;
  epochs?: number;
  seed?: number;
  pairs?: number;
  keyVocab?: number;
  valueVocab?: number;
  sequences?: number;
  outPath: string;
  csvOutPath?: string;
}

export interface BenchSamRequest {
  minLen?: number;
  maxLen?: number;
  routeBits?: number;
  seed?: number;
  repeats?: number;
  maxRatio?: number;
  outPath: string;
}

export interface GradcheckLine {
  pass: boolean;
  name: string;
  detail: string;
}

export class RosaCli {
  private readonly command: string[];
  private readonly cwd?: string;
  private readonly workers?: number;
  private readonly timeoutMs: number;

  constructor(options: RosaCliOptions = {}) {
    this.command = options.command ?? ["python3", "-m", "rosa.cli"];
    this.cwd = options.cwd;
    this.workers = options.workers;
    this.timeoutMs = options.timeoutMs ?? 600_000;
  }

  private run(args: string[], allowExit1 = false): { stdout: string; status: number } {
    const [bin, ...prefix] = this.command;
    const env = { ...process.env };
    if (this.workers !== undefined) env.ROSA_WORKERS = String(this.workers);
    const res = spawnSync(bin, [...prefix, ...args], {
      cwd: this.cwd,
      env,
      encoding: "utf-8",
      timeout: this.timeoutMs,
    });
    if (res.error) throw res.error;
    if (res.status === 2) {
      throw new CliConfigError(`rosa ${args[0]}: ${res.stderr.trim() || res.stdout.trim()}`);
    }
    if (res.status !== 0 && !(allowExit1 && res.status === 1)) {
      throw new CliFailedCheckError(
        `rosa ${args[0]} exited ${res.status}: ${res.stderr.trim() || res.stdout.trim()}`,
      );
    }
    return { stdout: res.stdout, status: res.status ?? -1 };
  }

  retrieve(req: RetrieveRequest): RetrieveResult {
    const args = [
      "retrieve",
      "--queries", req.queriesPath,
      "--keys", req.keysPath,
      "--out-prefix", req.outPrefix,
    ];
    if (req.workers !== undefined) args.push("--workers", String(req.workers));
    if (req.engine) args.push("--engine", req.engine);
    if (req.configPath) args.push("--config", req.configPath);
    this.run(args);
    return {
      tau: readI32Tensor(`${req.outPrefix}.tau.bin`),
      mask: readI32Tensor(`${req.outPrefix}.mask.bin`),
      tauCf: readI32Tensor(`${req.outPrefix}.taucf.bin`),
      ridxCf: readI32Tensor(`${req.outPrefix}.ridxcf.bin`),
    };
  }

  collisionStats(routeBits: number, samples?: number, seed?: number): SymbolStatsReport {
    const args = ["collision-stats", "--route-bits", String(routeBits)];
    if (samples !== undefined) args.push("--samples", String(samples));
    if (seed !== undefined) args.push("--seed", String(seed));
    return parseStatsJson(this.run(args, true).stdout);
  }

  stabilityStats(
    routeBits: number,
    delta?: number,
    samples?: number,
    seed?: number,
  ): SymbolStatsReport {
    const args = ["stability-stats", "--route-bits", String(routeBits)];
    if (delta !== undefined) args.push("--delta", String(delta));
    if (samples !== undefined) args.push("--samples", String(samples));
    if (seed !== undefined) args.push("--seed", String(seed));
    return parseStatsJson(this.run(args, true).stdout);
  }

  gradcheck(seed?: number): GradcheckLine[] {
    const args = ["gradcheck"];
    if (seed !== undefined) args.push("--seed", String(seed));
    const { stdout } = this.run(args, true);
    const lines: GradcheckLine[] = [];
    for (const line of stdout.split("\n")) {
      const m = line.match(/^(PASS|FAIL) (\S+): (.*)$/);
      if (m) lines.push({ pass: m[1] === "PASS", name: m[2], detail: m[3] });
    }
    return lines;
  }

  benchSam(req: BenchSamRequest): BenchRow[] {
    const args = ["bench-sam", "--out", req.outPath];
    if (req.minLen !== undefined) args.push("--min-len", String(req.minLen));
    if (req.maxLen !== undefined) args.push("--max-len", String(req.maxLen));
    if (req.routeBits !== undefined) args.push("--route-bits", String(req.routeBits));
    if (req.seed !== undefined) args.push("--seed", String(req.seed));
    if (req.repeats !== undefined) args.push("--repeats", String(req.repeats));
    if (req.maxRatio !== undefined) args.push("--max-ratio", String(req.maxRatio));
    this.run(args);
    return parseBenchCsv(readFileSync(req.outPath, "utf-8"));
  }

  mqar(req: MqarRequest): EpochMetrics[] {
    const args = ["mqar", "--out", req.outPath];
    const flag = (name: string, v: number | string | undefined) => {
      if (v !== undefined) args.push(name, String(v));
    };
    flag("--mode", req.mode);
    flag("--dim", req.dim);
    flag("--seq-len", req.seqLen);
    flag("--window", req.window);
    flag("--route-bits", req.routeBits);
    flag("--epochs", req.epochs);
    flag("--seed", req.seed);
    flag("--pairs", req.pairs);
    flag("--key-vocab", req.keyVocab);
    flag("--value-vocab", req.valueVocab);
    flag("--sequences", req.sequences);
    flag("--csv-out", req.csvOutPath);
    this.run(args);
    return parseJsonlMetrics(readFileSync(req.outPath, "utf-8"));
  }
}
