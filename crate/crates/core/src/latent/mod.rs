//! Latent temporal segmentation: one anchor-frame window per clique.

mod search;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use search::{estep_assign, infer, Inference};

/// One clique's segment: 1-based first anchor frame and frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    /// Last covered frame (1-based, inclusive).
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }
}

/// Segmentation `H = (s_1..s_M, t_1..t_M)`. Ordering is lexicographic on
/// `(s_1, t_1, ..., s_M, t_M)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatentVars {
    windows: Vec<Window>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    CliqueCount { expected: usize, found: usize },
    StartBeforeFirstFrame { clique: usize },
    Length { clique: usize, len: usize, min: usize, max: usize },
    Overlap { clique: usize },
    PastEnd { clique: usize, end: usize, anchors: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::CliqueCount { expected, found } => {
                write!(f, "expected {expected} segments, found {found}")
            }
            Violation::StartBeforeFirstFrame { clique } => {
                write!(f, "segment {clique} starts before frame 1")
            }
            Violation::Length { clique, len, min, max } => {
                write!(f, "segment {clique} has length {len}, outside [{min}, {max}]")
            }
            Violation::Overlap { clique } => {
                write!(f, "segment {clique} overlaps the previous segment")
            }
            Violation::PastEnd { clique, end, anchors } => {
                write!(f, "segment {clique} ends at frame {end}, past the last anchor {anchors}")
            }
        }
    }
}

impl LatentVars {
    pub fn new(windows: Vec<Window>) -> Self {
        LatentVars { windows }
    }

    pub fn from_parts(starts: &[usize], lengths: &[usize]) -> Self {
        LatentVars {
            windows: starts
                .iter()
                .zip(lengths)
                .map(|(&start, &len)| Window { start, len })
                .collect(),
        }
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn starts(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.start).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.len).collect()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Checks every constraint, reporting the first one violated.
    pub fn validate(&self, anchors: usize, cliques: usize, min: usize, max: usize) -> Result<(), Violation> {
        if self.windows.len() != cliques {
            return Err(Violation::CliqueCount {
                expected: cliques,
                found: self.windows.len(),
            });
        }
        for (i, w) in self.windows.iter().enumerate() {
            let clique = i + 1;
            if w.start < 1 {
                return Err(Violation::StartBeforeFirstFrame { clique });
            }
            if w.len < min || w.len > max || w.len == 0 {
                return Err(Violation::Length { clique, len: w.len, min, max });
            }
            if i > 0 {
                let prev = self.windows[i - 1];
                if prev.start + prev.len > w.start {
                    return Err(Violation::Overlap { clique });
                }
            }
            if w.end() > anchors {
                return Err(Violation::PastEnd { clique, end: w.end(), anchors });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, anchors: usize, cliques: usize, min: usize, max: usize) -> bool {
        self.validate(anchors, cliques, min, max).is_ok()
    }

    /// Comma-separated `s1,t1,...,sM,tM`.
    pub fn to_csv_fields(&self) -> String {
        self.windows
            .iter()
            .map(|w| format!("{},{}", w.start, w.len))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for LatentVars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s=({}) t=(", self.starts().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
        write!(f, "{})", self.lengths().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
    }
}

/// Fixed split into consecutive windows: window `i` starts at
/// `1 + (i-1) * ceil(A/M)` with length `min(m, remaining, ceil(A/M))`.
/// Returns `None` when a window would start past the last anchor.
pub fn even_split(anchors: usize, cliques: usize, max: usize) -> Option<LatentVars> {
    if cliques == 0 || anchors == 0 {
        return None;
    }
    let step = anchors.div_ceil(cliques);
    let mut windows = Vec::with_capacity(cliques);
    for i in 0..cliques {
        let start = 1 + i * step;
        if start > anchors {
            return None;
        }
        let remaining = anchors - start + 1;
        windows.push(Window {
            start,
            len: max.min(remaining).min(step),
        });
    }
    Some(LatentVars { windows })
}

static ENUMERATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of enumerators constructed so far in this process.
pub fn enumeration_calls() -> usize {
    ENUMERATIONS.load(Ordering::Relaxed)
}

/// Streams every valid segmentation in lexicographic order with `O(M)` state.
#[derive(Clone, Debug)]
pub struct LatentEnumerator {
    anchors: usize,
    min: usize,
    max: usize,
    windows: Vec<Window>,
    started: bool,
    done: bool,
}

impl LatentEnumerator {
    pub fn new(anchors: usize, cliques: usize, min: usize, max: usize) -> Self {
        Self::starting_at(anchors, cliques, min, max, 1)
    }

    /// Enumerates segmentations whose first window starts at or after `first_start`.
    pub fn starting_at(anchors: usize, cliques: usize, min: usize, max: usize, first_start: usize) -> Self {
        ENUMERATIONS.fetch_add(1, Ordering::Relaxed);
        let min = min.max(1);
        let first_start = first_start.max(1);
        let done = cliques == 0 || min > max || first_start - 1 + cliques * min > anchors;
        let mut windows = Vec::with_capacity(cliques);
        if !done {
            let mut s = first_start;
            for _ in 0..cliques {
                windows.push(Window { start: s, len: min });
                s += min;
            }
        }
        LatentEnumerator {
            anchors,
            min,
            max,
            windows,
            started: false,
            done,
        }
    }

    fn pack_after(&mut self, j: usize) {
        for k in j + 1..self.windows.len() {
            let prev = self.windows[k - 1];
            self.windows[k] = Window {
                start: prev.start + prev.len,
                len: self.min,
            };
        }
    }

    fn advance(&mut self) -> bool {
        let m = self.windows.len();
        for j in (0..m).rev() {
            let tail = (m - 1 - j) * self.min;
            let w = self.windows[j];
            if w.len < self.max && w.start + w.len + tail <= self.anchors {
                self.windows[j].len += 1;
                self.pack_after(j);
                return true;
            }
            if w.start + self.min + tail <= self.anchors {
                self.windows[j] = Window {
                    start: w.start + 1,
                    len: self.min,
                };
                self.pack_after(j);
                return true;
            }
        }
        false
    }
}

impl Iterator for LatentEnumerator {
    type Item = LatentVars;

    fn next(&mut self) -> Option<LatentVars> {
        if self.done {
            return None;
        }
        if self.started {
            if !self.advance() {
                self.done = true;
                return None;
            }
        } else {
            self.started = true;
        }
        Some(LatentVars {
            windows: self.windows.clone(),
        })
    }
}

pub fn enumerate(anchors: usize, cliques: usize, min: usize, max: usize) -> LatentEnumerator {
    LatentEnumerator::new(anchors, cliques, min, max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Straightforward recursion over every window choice.
    fn brute_count(anchors: usize, cliques: usize, min: usize, max: usize) -> usize {
        fn go(from: usize, left: usize, a: usize, min: usize, max: usize) -> usize {
            if left == 0 {
                return 1;
            }
            let mut n = 0;
            for s in from..=a {
                for t in min..=max {
                    if s + t - 1 <= a {
                        n += go(s + t, left - 1, a, min, max);
                    }
                }
            }
            n
        }
        go(1, cliques, anchors, min, max)
    }

    #[test]
    fn even_split_defaults_validate() {
        let h = even_split(30, 4, 9).unwrap();
        assert_eq!(h.starts(), vec![1, 9, 17, 25]);
        assert_eq!(h.lengths(), vec![8, 8, 8, 6]);
        // hand check: lengths in [5, 9]; 1+8<=9, 9+8<=17, 17+8<=25; 25+6-1=30<=30
        assert!(h.is_valid(30, 4, 5, 9));
    }

    #[test]
    fn overlap_and_length_named() {
        let h = LatentVars::from_parts(&[1, 8], &[8, 6]);
        assert_eq!(h.validate(30, 2, 5, 9), Err(Violation::Overlap { clique: 2 }));
        let h = LatentVars::from_parts(&[1, 10], &[8, 4]);
        assert!(matches!(h.validate(30, 2, 5, 9), Err(Violation::Length { clique: 2, len: 4, .. })));
        let h = LatentVars::from_parts(&[1, 26], &[8, 6]);
        assert!(matches!(h.validate(30, 2, 5, 9), Err(Violation::PastEnd { .. })));
        let h = LatentVars::from_parts(&[0], &[5]);
        assert!(matches!(h.validate(30, 1, 5, 9), Err(Violation::StartBeforeFirstFrame { .. })));
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate(30, 1, 5, 9).count(), 120);
        assert_eq!(enumerate(6, 1, 2, 3).count(), 9);
        let exact: Vec<_> = enumerate(15, 3, 5, 9).collect();
        assert_eq!(exact, vec![LatentVars::from_parts(&[1, 6, 11], &[5, 5, 5])]);
        assert_eq!(enumerate(8, 3, 3, 4).count(), 0);
    }

    #[test]
    fn exhaustive_small_grid() {
        for a in 1..=12 {
            for m_cl in 1..=3 {
                for tau in 1..=3 {
                    for m in 1..=4 {
                        let all: Vec<_> = enumerate(a, m_cl, tau, m).collect();
                        assert_eq!(all.len(), brute_count(a, m_cl, tau, m), "A={a} M={m_cl} tau={tau} m={m}");
                        assert!(all.windows(2).all(|p| p[0] < p[1]));
                        assert!(all.iter().all(|h| h.is_valid(a, m_cl, tau, m)));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn suffix_enumeration_matches_filter(a in 4usize..14, first in 1usize..6) {
            let all: Vec<_> = enumerate(a, 2, 2, 3).filter(|h| h.windows()[0].start >= first).collect();
            let sub: Vec<_> = LatentEnumerator::starting_at(a, 2, 2, 3, first).collect();
            prop_assert_eq!(all, sub);
        }
    }
}
