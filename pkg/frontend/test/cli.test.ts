import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { execFileSync } from "node:child_process";
import { describe, expect, it } from "vitest";

import { loadCheckpoint } from "../src/checkpoint.js";
import { RosaCli } from "../src/cli.js";

const dir = mkdtempSync(join(tmpdir(), "rosa-cli-"));
const cli = new RosaCli();

describe("stats subcommands", () => {
  it("parses the collision-stats report and its floor holds", () => {
    const report = cli.collisionStats(2, 2000, 0);
    expect(report.routeBits).toBe(2);
    expect(report.bound).toBeCloseTo(0.25, 12);
    // the bound is a collision floor; the estimate may only fall short of
    // it by Monte-Carlo noise
    expect(report.estimate).toBeGreaterThan(report.bound - 0.05);
    expect(report.pass).toBe(true);
  });

  it("parses the stability-stats report", () => {
    const report = cli.stabilityStats(2, 0.05, 2000, 0);
    expect(report.routeBits).toBe(2);
    expect(report.estimate).toBeGreaterThanOrEqual(0);
    expect(typeof report.pass).toBe("boolean");
  });
});

describe("gradcheck", () => {
  it("yields one structured pass/fail line per checked operation", () => {
    const lines = cli.gradcheck(0);
    expect(lines.length).toBeGreaterThanOrEqual(3);
    for (const line of lines) {
      expect(line.name.length).toBeGreaterThan(0);
      expect(line.pass).toBe(true);
    }
  });
});

describe("checkpoint loading", () => {
  it("reads a manifest-plus-binary checkpoint written by the library", () => {
    const prefix = join(dir, "ckpt");
    const script = [
      "import numpy as np",
      "from rosa.checkpoint import save_checkpoint",
      "params = {'w': np.arange(6, dtype=np.float64).reshape(2, 3) / 7.0,",
      "          'b': np.array([1.5, -2.5])}",
      `save_checkpoint(${JSON.stringify(prefix)}, params)`,
    ].join("\n");
    execFileSync("python3", ["-c", script]);

    const ckpt = loadCheckpoint(prefix);
    expect([...ckpt.keys()].sort()).toEqual(["b", "w"]);
    const w = ckpt.get("w")!;
    expect(w.shape).toEqual([2, 3]);
    for (let i = 0; i < 6; i++) {
      expect(w.data[i]).toBeCloseTo(i / 7.0, 6);
    }
    expect(Array.from(ckpt.get("b")!.data)).toEqual([1.5, -2.5]);
  });

  it("rejects a binary whose size disagrees with the manifest", () => {
    const prefix = join(dir, "bad");
    writeFileSync(
      `${prefix}.json`,
      JSON.stringify({ version: 1, params: [{ name: "w", shape: [4] }] }),
    );
    writeFileSync(`${prefix}.bin`, Buffer.alloc(8));
    expect(() => loadCheckpoint(prefix)).toThrow(/short|size/i);
  });
});
