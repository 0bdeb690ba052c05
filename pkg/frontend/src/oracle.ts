/**
 * Brute-force reference for the retrieval semantics, used to validate the
 * CLI outputs for tiny streams. Mirrors the engine's contract: key symbols
 * fold into runs, the matched string advances only at query-run boundaries
 * (longest suffix of previous-match + symbol that occurs in the folded key
 * runs, found by naive scan), and the destination is the start of the run
 * after the most recent occurrence, re-evaluated every step.
 */

export interface RetrieveTables {
  /** (B, T, R) */
  tau: Int32Array;
  /** (B, T, R); 1 where tau >= 0 */
  mask: Int32Array;
  /** (B, T, R, M, 2) */
  tauCf: Int32Array;
  /** (B, T, R, M, 2) */
  ridxCf: Int32Array;
}

function occurrencesEnd(hay: number[], needle: number[]): number[] {
  const out: number[] = [];
  for (let start = 0; start + needle.length <= hay.length; start++) {
    let ok = true;
    for (let i = 0; i < needle.length; i++) {
      if (hay[start + i] !== needle[i]) {
        ok = false;
        break;
      }
    }
    if (ok) out.push(start + needle.length - 1);
  }
  return out;
}

class RouteMatcher {
  keyRuns: number[] = [];
  runStarts: number[] = [];
  matched: number[] = [];
  cfMatched: number[][][] = [];
  lastQuery: number | null = null;

  private advance(prev: number[], symbol: number): number[] {
    const w = [...prev, symbol];
    for (let drop = 0; drop < w.length; drop++) {
      const cand = w.slice(drop);
      if (occurrencesEnd(this.keyRuns, cand).length > 0) return cand;
    }
    return [];
  }

  private dest(matched: number[], t: number): [number, number] {
    if (matched.length === 0) return [-1, -1];
    const ends = occurrencesEnd(this.keyRuns, matched);
    const p = Math.max(...ends);
    if (p + 1 < this.runStarts.length && this.runStarts[p + 1] < t) {
      return [this.runStarts[p + 1], p + 1];
    }
    return [-1, -1];
  }

  step(keySymbol: number, querySymbol: number, t: number, routeBits: number) {
    if (this.keyRuns.length === 0 || this.keyRuns[this.keyRuns.length - 1] !== keySymbol) {
      this.keyRuns.push(keySymbol);
      this.runStarts.push(t);
    }
    if (querySymbol !== this.lastQuery) {
      const prev = [...this.matched];
      this.matched = this.advance(prev, querySymbol);
      this.cfMatched = [];
      for (let j = 0; j < routeBits; j++) {
        const byBit: number[][] = [];
        for (const u of [0, 1]) {
          const forced = (querySymbol & ~(1 << j)) | (u << j);
          byBit.push(this.advance(prev, forced));
        }
        this.cfMatched.push(byBit);
      }
      this.lastQuery = querySymbol;
    }
    const [tau] = this.dest(this.matched, t);
    const tauCf: number[][] = [];
    const ridxCf: number[][] = [];
    for (let j = 0; j < routeBits; j++) {
      tauCf.push([0, 0]);
      ridxCf.push([0, 0]);
      for (const u of [0, 1]) {
        const [d, ridx] = this.dest(this.cfMatched[j][u], t);
        tauCf[j][u] = d;
        ridxCf[j][u] = ridx;
      }
    }
    return { tau, tauCf, ridxCf };
  }
}

/** Naive retrieval over (B, T, R) query/key symbol streams in (b, t, r) order. */
export function naiveRetrieve(
  qSyms: Uint16Array,
  kSyms: Uint16Array,
  shape: [number, number, number],
  routeBits: number,
): RetrieveTables {
  const [batch, steps, routes] = shape;
  const tau = new Int32Array(batch * steps * routes).fill(-1);
  const mask = new Int32Array(batch * steps * routes);
  const tauCf = new Int32Array(batch * steps * routes * routeBits * 2).fill(-1);
  const ridxCf = new Int32Array(batch * steps * routes * routeBits * 2).fill(-1);
  for (let b = 0; b < batch; b++) {
    for (let r = 0; r < routes; r++) {
      const matcher = new RouteMatcher();
      for (let t = 0; t < steps; t++) {
        const flat = (b * steps + t) * routes + r;
        const res = matcher.step(kSyms[flat], qSyms[flat], t, routeBits);
        tau[flat] = res.tau;
        mask[flat] = res.tau >= 0 ? 1 : 0;
        for (let j = 0; j < routeBits; j++) {
          for (const u of [0, 1]) {
            tauCf[(flat * routeBits + j) * 2 + u] = res.tauCf[j][u];
            ridxCf[(flat * routeBits + j) * 2 + u] = res.ridxCf[j][u];
          }
        }
      }
    }
  }
  return { tau, mask, tauCf, ridxCf };
}
