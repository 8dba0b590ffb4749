//! Brute-force persistence oracle: materialize every simplex, build the full
//! boundary matrix over the two-element field, and run the textbook
//! left-to-right column reduction. Quartic-and-worse in the point count, so
//! capped at 12 points; exists purely to check the fast path.

use super::{
    pairwise_distances, resolve_threshold, FiltrationParams, HomologyError, PersistenceDiagram,
    PersistencePair,
};
use crate::embed::PointCloud;

const MAX_ORACLE_POINTS: usize = 12;

struct OracleSimplex {
    verts: Vec<u32>,
    diam: f64,
}

/// Same contract as [`super::compute_persistence`], computed independently.
pub fn oracle_persistence(
    cloud: &PointCloud,
    params: &FiltrationParams,
) -> Result<Vec<PersistenceDiagram>, HomologyError> {
    if params.max_dim > 2 {
        return Err(HomologyError::InvalidMaxDim(params.max_dim));
    }
    if cloud.len() > MAX_ORACLE_POINTS {
        return Err(HomologyError::OracleTooLarge {
            got: cloud.len(),
            max: MAX_ORACLE_POINTS,
        });
    }
    let dist = pairwise_distances(cloud)?;
    let threshold = resolve_threshold(params, &dist)?;
    let n = dist.n();

    // Materialize every simplex up to dimension max_dim + 1.
    let mut simplices: Vec<OracleSimplex> = Vec::new();
    let mut stack: Vec<u32> = Vec::new();
    enumerate_subsets(
        n as u32,
        params.max_dim + 2,
        &mut stack,
        &mut |verts: &[u32]| {
            let diam = subset_diameter(verts, &dist);
            if diam <= threshold {
                simplices.push(OracleSimplex {
                    verts: verts.to_vec(),
                    diam,
                });
            }
        },
    );

    // Global filtration order: diameter, then dimension, then vertex tuple.
    simplices.sort_by(|a, b| {
        a.diam
            .total_cmp(&b.diam)
            .then(a.verts.len().cmp(&b.verts.len()))
            .then_with(|| a.verts.cmp(&b.verts))
    });

    let position: std::collections::HashMap<&[u32], usize> = simplices
        .iter()
        .enumerate()
        .map(|(idx, s)| (s.verts.as_slice(), idx))
        .collect();

    // Left-to-right reduction of the boundary matrix.
    let m = simplices.len();
    let mut reduced: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut pivot_owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut pair_of: Vec<Option<usize>> = vec![None; m]; // birth index -> death index

    for j in 0..m {
        let mut column: Vec<usize> = if simplices[j].verts.len() == 1 {
            Vec::new()
        } else {
            let mut facets: Vec<usize> = Vec::with_capacity(simplices[j].verts.len());
            for omit in 0..simplices[j].verts.len() {
                let mut fv = simplices[j].verts.clone();
                fv.remove(omit);
                facets.push(position[fv.as_slice()]);
            }
            facets.sort_unstable();
            facets
        };

        while let Some(&low) = column.last() {
            match pivot_owner.get(&low) {
                Some(&owner) => column = symmetric_difference(&column, &reduced[owner]),
                None => break,
            }
        }
        if let Some(&low) = column.last() {
            pivot_owner.insert(low, j);
            pair_of[low] = Some(j);
        }
        reduced.push(column);
    }

    let mut diagrams: Vec<PersistenceDiagram> = (0..=params.max_dim)
        .map(|d| PersistenceDiagram::empty(d, threshold))
        .collect();

    for (i, s) in simplices.iter().enumerate() {
        let dim = s.verts.len() - 1;
        if !reduced[i].is_empty() {
            continue; // destroyer column: handled through the class it kills
        }
        match pair_of[i] {
            Some(j) => {
                let death = simplices[j].diam;
                if dim <= params.max_dim && death > s.diam {
                    diagrams[dim].pairs.push(PersistencePair {
                        birth: s.diam,
                        death,
                    });
                }
            }
            None => {
                if dim <= params.max_dim {
                    diagrams[dim].essential_births.push(s.diam);
                }
            }
        }
    }

    for dgm in &mut diagrams {
        dgm.canonicalize();
    }
    Ok(diagrams)
}

fn subset_diameter(verts: &[u32], dist: &super::CondensedDistances) -> f64 {
    let mut diam = 0.0f64;
    for (a, &i) in verts.iter().enumerate() {
        for &j in &verts[a + 1..] {
            diam = diam.max(dist.get(i as usize, j as usize));
        }
    }
    diam
}

/// All nonempty subsets of `0..n` with at most `max_size` elements, emitted
/// in ascending vertex order.
fn enumerate_subsets(n: u32, max_size: usize, stack: &mut Vec<u32>, emit: &mut impl FnMut(&[u32])) {
    let start = stack.last().map_or(0, |&v| v + 1);
    for v in start..n {
        stack.push(v);
        emit(stack);
        if stack.len() < max_size {
            enumerate_subsets(n, max_size, stack, emit);
        }
        stack.pop();
    }
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => {
                out.push(a[x]);
                x += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[y]);
                y += 1;
            }
            std::cmp::Ordering::Equal => {
                x += 1;
                y += 1;
            }
        }
    }
    out.extend_from_slice(&a[x..]);
    out.extend_from_slice(&b[y..]);
    out
}
