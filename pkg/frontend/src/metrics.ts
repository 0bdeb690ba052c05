/** Parsers for the toolkit's JSONL/CSV metrics outputs. */

export class MetricsFormatError extends Error {}

export interface EpochMetrics {
  epoch: number;
  loss: number;
  valAcc: number;
  mode?: string;
  seed?: number;
}

/** Parse mqar JSONL metrics; error records raise, metric records are typed. */
export function parseJsonlMetrics(text: string): EpochMetrics[] {
  const out: EpochMetrics[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    let rec: Record<string, unknown>;
    try {
      rec = JSON.parse(line);
    } catch {
      throw new MetricsFormatError(`invalid JSONL line: ${line.slice(0, 80)}`);
    }
    if (typeof rec.error === "string") {
      throw new MetricsFormatError(`run reported an error: ${rec.error}`);
    }
    if (
      typeof rec.epoch !== "number" ||
      typeof rec.loss !== "number" ||
      typeof rec.val_acc !== "number"
    ) {
      throw new MetricsFormatError(`metrics record missing epoch/loss/val_acc: ${line}`);
    }
    out.push({
      epoch: rec.epoch,
      loss: rec.loss,
      valAcc: rec.val_acc,
      mode: typeof rec.mode === "string" ? rec.mode : undefined,
      seed: typeof rec.seed === "number" ? rec.seed : undefined,
    });
  }
  return out;
}

function parseCsv(text: string, header: string[]): number[][] {
  const lines = text.split(/\r?\n/).filter((l) => l.trim());
  if (lines.length === 0 || lines[0].split(",").join(",") !== header.join(",")) {
    throw new MetricsFormatError(`expected CSV header ${header.join(",")}`);
  }
  return lines.slice(1).map((line) => {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new MetricsFormatError(`CSV row has ${cells.length} cells, want ${header.length}`);
    }
    return cells.map((c) => {
      if (c.trim() === "nan") return NaN; // bench-sam's first ratio_vs_half has no predecessor
      const v = Number(c);
      if (!Number.isFinite(v)) throw new MetricsFormatError(`non-numeric CSV cell ${c}`);
      return v;
    });
  });
}

/** Parse the mqar per-epoch CSV (epoch,loss,val_acc). */
export function parseEpochCsv(text: string): EpochMetrics[] {
  return parseCsv(text, ["epoch", "loss", "val_acc"]).map(([epoch, loss, valAcc]) => ({
    epoch,
    loss,
    valAcc,
  }));
}

export interface BenchRow {
  length: number;
  seconds: number;
  nsPerStep: number;
  ratioVsHalf: number;
}

/** Parse the bench-sam CSV (T,seconds,ns_per_step,ratio_vs_half). */
export function parseBenchCsv(text: string): BenchRow[] {
  return parseCsv(text, ["T", "seconds", "ns_per_step", "ratio_vs_half"]).map(
    ([length, seconds, nsPerStep, ratioVsHalf]) => ({ length, seconds, nsPerStep, ratioVsHalf }),
  );
}

export interface SymbolStatsReport {
  routeBits: number;
  estimate: number;
  bound: number;
  pass: boolean;
}

/** Parse collision-stats / stability-stats JSON output. */
export function parseStatsJson(text: string): SymbolStatsReport {
  let rec: Record<string, unknown>;
  try {
    rec = JSON.parse(text);
  } catch {
    throw new MetricsFormatError(`invalid stats JSON: ${text.slice(0, 80)}`);
  }
  if (
    typeof rec.M !== "number" ||
    typeof rec.estimate !== "number" ||
    typeof rec.bound !== "number" ||
    typeof rec.pass !== "boolean"
  ) {
    throw new MetricsFormatError(`stats JSON missing M/estimate/bound/pass: ${text}`);
  }
  return { routeBits: rec.M, estimate: rec.estimate, bound: rec.bound, pass: rec.pass };
}
