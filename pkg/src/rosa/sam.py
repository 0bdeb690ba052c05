"""Online suffix automaton over a route's run-level key symbol sequence.

Beyond the textbook construction (Blumer et al.), each state tracks the run
index at which its substrings most recently ended, so the matcher can jump
to the most recent occurrence of the currently matched string.
"""

from __future__ import annotations

from array import array
from typing import NamedTuple


class MatchCursor(NamedTuple):
    state: int
    length: int


ROOT_CURSOR = MatchCursor(0, 0)


class SuffixAutomaton:
    """Suffix automaton built online, one run symbol at a time.

    State 0 is the root (empty string). Storage is laid out for cache
    residency at million-state scale: per-state scalars (length, suffix
    link, recent endpos) are flat ``array('i')`` columns, and because most
    states carry exactly one outgoing transition, that first transition is
    stored inline in two more flat columns; only states with two or more
    transitions spill into a shared overflow dict. Boxed-int lists double
    the per-step cost at 10^6 states purely through TLB/cache misses on
    the suffix-link walks. (The batch engine uses flat transition tables.)
    """

    __slots__ = ("len_", "link", "recent_end", "sym1", "tgt1", "extra", "last", "inserted_runs")

    def __init__(self) -> None:
        self.len_ = array("i", [0])
        self.link = array("i", [-1])
        self.recent_end = array("i", [-1])
        self.sym1 = array("i", [-1])  # first transition symbol, -1 if none
        self.tgt1 = array("i", [0])  # first transition target
        self.extra: dict[int, dict[int, int]] = {}  # state -> overflow transitions
        self.last = 0
        self.inserted_runs = 0

    def __len__(self) -> int:
        return len(self.len_)

    def transitions(self, state: int) -> dict[int, int]:
        """All outgoing transitions of a state, as a symbol -> target dict."""
        out = {}
        if self.sym1[state] != -1:
            out[self.sym1[state]] = self.tgt1[state]
        out.update(self.extra.get(state, {}))
        return out

    def extend(self, symbol: int) -> None:
        """Append one run symbol; updates recent-end along the suffix chain."""
        len_, link, recent = self.len_, self.link, self.recent_end
        sym1, tgt1, extra = self.sym1, self.tgt1, self.extra
        pos = self.inserted_runs
        self.inserted_runs += 1
        cur = len(len_)
        len_.append(len_[self.last] + 1)
        link.append(-1)
        recent.append(pos)
        sym1.append(-1)
        tgt1.append(0)
        p = self.last
        while p != -1:
            s1 = sym1[p]
            if s1 == symbol:
                break
            if s1 == -1:
                sym1[p] = symbol
                tgt1[p] = cur
            else:
                e = extra.get(p)
                if e is None:
                    extra[p] = {symbol: cur}
                elif symbol not in e:
                    e[symbol] = cur
                else:
                    break
            p = link[p]
        if p == -1:
            link[cur] = 0
        else:
            q = tgt1[p] if sym1[p] == symbol else extra[p][symbol]
            if len_[p] + 1 == len_[q]:
                link[cur] = q
            else:
                clone = len(len_)
                len_.append(len_[p] + 1)
                link.append(link[q])
                recent.append(recent[q])
                sym1.append(sym1[q])
                tgt1.append(tgt1[q])
                eq = extra.get(q)
                if eq is not None:
                    extra[clone] = dict(eq)
                while p != -1:
                    if sym1[p] == symbol:
                        if tgt1[p] != q:
                            break
                        tgt1[p] = clone
                    else:
                        e = extra.get(p)
                        if e is None or e.get(symbol) != q:
                            break
                        e[symbol] = clone
                    p = link[p]
                link[q] = clone
                link[cur] = clone
        self.last = cur
        # Every suffix of the full sequence now ends at `pos`; their states
        # are exactly the suffix-link chain from `last`.
        s = cur
        while s != -1:
            recent[s] = pos
            s = link[s]

    def _renormalize(self, cursor: MatchCursor) -> MatchCursor:
        # Clones created after the cursor was taken can leave it pointing at
        # a state that no longer owns the matched string; walk links until
        # the length falls inside the state's range.
        state, length = cursor
        if length == 0:
            return ROOT_CURSOR
        while self.link[state] != -1 and length <= self.len_[self.link[state]]:
            state = self.link[state]
        return MatchCursor(state, length)

    def match_advance(self, cursor: MatchCursor, symbol: int) -> MatchCursor:
        """Longest suffix of (matched string + symbol) present in the sequence."""
        len_, link, sym1, tgt1, extra = self.len_, self.link, self.sym1, self.tgt1, self.extra
        state, length = cursor
        if length == 0:
            state = 0
        else:
            while link[state] != -1 and length <= len_[link[state]]:
                state = link[state]
        if sym1[state] == symbol:
            return MatchCursor(tgt1[state], length + 1)
        e = extra.get(state)
        if e is not None:
            t = e.get(symbol)
            if t is not None:
                return MatchCursor(t, length + 1)
        state = link[state]
        while state != -1:
            if sym1[state] == symbol:
                return MatchCursor(tgt1[state], len_[state] + 1)
            e = extra.get(state)
            if e is not None:
                t = e.get(symbol)
                if t is not None:
                    return MatchCursor(t, len_[state] + 1)
            state = link[state]
        return ROOT_CURSOR

    def recent_endpos(self, cursor: MatchCursor) -> int | None:
        """Run index where the matched string most recently ends; None if empty."""
        if cursor.length == 0:
            return None
        state, _ = self._renormalize(cursor)
        return self.recent_end[state]
