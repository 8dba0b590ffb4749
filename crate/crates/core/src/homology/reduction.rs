//! Coboundary column reduction for dimensions 1 and 2.
//!
//! Columns are the dimension-p simplices in decreasing filtration order; each
//! column holds the simplex's cofacets. Left-to-right reduction of this
//! matrix yields exactly the homology pairing (anti-transpose equivalence),
//! and lets two standard shortcuts apply:
//!
//! * clearing - a simplex claimed as a pivot in the previous dimension's
//!   pass reduces to zero and is skipped as a column;
//! * emergent pairs - when the first cofacet found at the column's own
//!   diameter is unclaimed, it is the column's pivot outright and the
//!   remaining cofacets never need to be enumerated.
//!
//! Cofacets of `{v_0 < ... < v_p}` are enumerated by scanning the extra
//! vertex `w` in ascending order; among cofacets tied at the column's
//! diameter this visits the filtration-minimal one first, which is what makes
//! the emergent shortcut sound.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::rc::Rc;

use super::CondensedDistances;

/// A `K`-vertex simplex tagged with its diameter. Ordering is the filtration
/// order restricted to one dimension: diameter first, then the sorted vertex
/// tuple lexicographically.
#[derive(Debug, Clone, Copy)]
pub(super) struct Simplex<const K: usize> {
    pub diam: f64,
    pub verts: [u32; K],
}

impl<const K: usize> PartialEq for Simplex<K> {
    fn eq(&self, other: &Self) -> bool {
        self.verts == other.verts
    }
}

impl<const K: usize> Eq for Simplex<K> {}

impl<const K: usize> Ord for Simplex<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.diam
            .total_cmp(&other.diam)
            .then_with(|| self.verts.cmp(&other.verts))
    }
}

impl<const K: usize> PartialOrd for Simplex<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Binomial table for ranking simplices in the combinatorial number system.
pub(super) struct Binomial {
    n: usize,
    table: Vec<u64>, // table[v * 5 + k] = C(v, k), k <= 4
}

impl Binomial {
    pub fn new(n: usize) -> Self {
        let mut table = vec![0u64; (n + 1) * 5];
        for v in 0..=n {
            table[v * 5] = 1;
            for k in 1..=4.min(v) {
                let prev = |vv: usize, kk: usize| table[vv * 5 + kk];
                table[v * 5 + k] = prev(v - 1, k - 1) + prev(v - 1, k);
            }
        }
        Binomial { n, table }
    }

    #[inline]
    fn c(&self, v: usize, k: usize) -> u64 {
        debug_assert!(v <= self.n && k <= 4);
        self.table[v * 5 + k]
    }

    /// Injective rank of a sorted vertex tuple among same-size tuples.
    #[inline]
    pub fn rank<const K: usize>(&self, verts: &[u32; K]) -> u64 {
        let mut r = 0u64;
        for (t, &v) in verts.iter().enumerate() {
            r += self.c(v as usize, t + 1);
        }
        r
    }
}

/// All edges within the threshold, sorted ascending in filtration order.
pub(super) fn collect_edges(dist: &CondensedDistances, threshold: f64) -> Vec<Simplex<2>> {
    let n = dist.n();
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            let d = dist.get(i as usize, j as usize);
            if d <= threshold {
                edges.push(Simplex {
                    diam: d,
                    verts: [i, j],
                });
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// All triangles within the threshold, unsorted.
pub(super) fn collect_triangles(dist: &CondensedDistances, threshold: f64) -> Vec<Simplex<3>> {
    let n = dist.n();
    let mut tris = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = dist.get(i, j);
            if dij > threshold {
                continue;
            }
            for k in (j + 1)..n {
                let diam = dij.max(dist.get(i, k)).max(dist.get(j, k));
                if diam <= threshold {
                    tris.push(Simplex {
                        diam,
                        verts: [i as u32, j as u32, k as u32],
                    });
                }
            }
        }
    }
    tris
}

#[inline]
fn insert_sorted<const CV: usize, const RV: usize>(verts: &[u32; CV], w: u32) -> [u32; RV] {
    debug_assert_eq!(RV, CV + 1);
    let mut out = [0u32; RV];
    let mut pos = 0;
    for &v in verts.iter() {
        if w < v {
            break;
        }
        out[pos] = v;
        pos += 1;
    }
    out[pos] = w;
    for (idx, &v) in verts.iter().enumerate().skip(pos) {
        out[idx + 1] = v;
    }
    out
}

/// Visit every cofacet of `sx` with diameter within the threshold, in
/// ascending order of the added vertex. Returns early when `f` does.
fn for_each_cofacet<const CV: usize, const RV: usize>(
    sx: &Simplex<CV>,
    dist: &CondensedDistances,
    threshold: f64,
    mut f: impl FnMut(Simplex<RV>) -> bool,
) {
    let n = dist.n() as u32;
    'outer: for w in 0..n {
        let mut dw = 0.0f64;
        for &v in sx.verts.iter() {
            if v == w {
                continue 'outer;
            }
            dw = dw.max(dist.get(v as usize, w as usize));
        }
        let diam = sx.diam.max(dw);
        if diam > threshold {
            continue;
        }
        let cofacet = Simplex {
            diam,
            verts: insert_sorted::<CV, RV>(&sx.verts, w),
        };
        if !f(cofacet) {
            return;
        }
    }
}

enum ColumnData<const CV: usize, const RV: usize> {
    /// Column equals the raw coboundary of this simplex (no additions were
    /// ever applied); re-enumerated on demand.
    Lazy(Simplex<CV>),
    Stored(Rc<Vec<Simplex<RV>>>),
}

pub(super) struct PassOutput {
    /// Positive-persistence (birth, death) pairs for dimension `CV - 1`.
    pub pairs: Vec<(f64, f64)>,
    /// Births of classes alive at the threshold.
    pub essential: Vec<f64>,
    /// Ranks of the row simplices claimed as pivots; the next pass clears
    /// these columns.
    pub pivot_ranks: std::collections::HashSet<u64>,
}

/// Pop the minimal row entry, cancelling duplicate entries mod 2.
fn pop_pivot<const K: usize>(heap: &mut BinaryHeap<Reverse<Simplex<K>>>) -> Option<Simplex<K>> {
    while let Some(Reverse(top)) = heap.pop() {
        let mut odd = true;
        while let Some(Reverse(next)) = heap.peek() {
            if *next == top {
                heap.pop();
                odd = !odd;
            } else {
                break;
            }
        }
        if odd {
            return Some(top);
        }
    }
    None
}

/// Reduce the coboundary columns of `columns` (sorted descending in
/// filtration order) against rows one dimension up.
pub(super) fn reduce_pass<const CV: usize, const RV: usize>(
    columns: &[Simplex<CV>],
    dist: &CondensedDistances,
    threshold: f64,
    binom: &Binomial,
) -> PassOutput {
    debug_assert!(columns.windows(2).all(|w| w[0] > w[1]));
    let mut pivot_table: HashMap<u64, ColumnData<CV, RV>> = HashMap::new();
    let mut pairs = Vec::new();
    let mut essential = Vec::new();

    for &sigma in columns {
        // Emergent-pair scan: collect cofacets until one appears at the
        // column's own diameter. That cofacet is the filtration-minimal one;
        // if unclaimed it is this column's pivot and the pair has zero
        // persistence.
        let mut initial: Vec<Simplex<RV>> = Vec::new();
        let mut shortcut_live = true;
        let mut emergent: Option<Simplex<RV>> = None;
        for_each_cofacet::<CV, RV>(&sigma, dist, threshold, |cf| {
            if shortcut_live && cf.diam == sigma.diam {
                if pivot_table.contains_key(&binom.rank(&cf.verts)) {
                    shortcut_live = false;
                } else {
                    emergent = Some(cf);
                    return false;
                }
            }
            initial.push(cf);
            true
        });

        if let Some(cf) = emergent {
            pivot_table.insert(binom.rank(&cf.verts), ColumnData::Lazy(sigma));
            continue;
        }

        let mut working: BinaryHeap<Reverse<Simplex<RV>>> =
            initial.into_iter().map(Reverse).collect();
        loop {
            match pop_pivot(&mut working) {
                None => {
                    essential.push(sigma.diam);
                    break;
                }
                Some(piv) => {
                    if let Some(owner) = pivot_table.get(&binom.rank(&piv.verts)) {
                        // Add the owning reduced column; the shared pivot
                        // cancels by parity.
                        working.push(Reverse(piv));
                        match owner {
                            ColumnData::Lazy(owner_sigma) => {
                                for_each_cofacet::<CV, RV>(
                                    owner_sigma,
                                    dist,
                                    threshold,
                                    |cf| {
                                        working.push(Reverse(cf));
                                        true
                                    },
                                );
                            }
                            ColumnData::Stored(entries) => {
                                for &e in entries.iter() {
                                    working.push(Reverse(e));
                                }
                            }
                        }
                    } else {
                        let mut column = Vec::with_capacity(working.len() + 1);
                        column.push(piv);
                        while let Some(e) = pop_pivot(&mut working) {
                            column.push(e);
                        }
                        pivot_table.insert(
                            binom.rank(&piv.verts),
                            ColumnData::Stored(Rc::new(column)),
                        );
                        if piv.diam > sigma.diam {
                            pairs.push((sigma.diam, piv.diam));
                        }
                        break;
                    }
                }
            }
        }
    }

    PassOutput {
        pairs,
        essential,
        pivot_ranks: pivot_table.keys().copied().collect(),
    }
}
