//! Weisfeiler-Lehman colour refinement with canonical (numbering-independent)
//! colour ids.

use std::collections::BTreeMap;

use crate::graph::Graph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WlColoring {
    /// Dense colour ids starting at 0.
    pub colors: Vec<usize>,
    /// Number of rounds that strictly refined the partition.
    pub rounds: usize,
}

impl WlColoring {
    pub fn num_classes(&self) -> usize {
        self.colors.iter().max().map_or(0, |&m| m + 1)
    }
}

/// Dense ranks of arbitrary ordered keys, preserving their order.
pub(crate) fn dense_rank<K: Ord + Clone>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut table: BTreeMap<K, usize> = keys.iter().map(|k| (k.clone(), 0)).collect();
    let classes = table.len();
    for (i, slot) in table.values_mut().enumerate() {
        *slot = i;
    }
    (keys.iter().map(|k| table[k]).collect(), classes)
}

/// Refines `init` for at most `max_rounds` rounds, stopping early once stable.
///
/// Each round maps a node to the rank of `(colour, sorted neighbour colours)`
/// among all such signatures, so ids depend only on structure and the ordered
/// initial colours, and every round refines the previous partition.
pub fn wl_refine(g: &Graph, init: &[usize], max_rounds: usize) -> WlColoring {
    let (mut colors, mut classes) = dense_rank(init);
    let mut rounds = 0;
    let mut sig: Vec<(usize, Vec<usize>)> = Vec::with_capacity(g.n());
    while rounds < max_rounds && classes < g.n() {
        sig.clear();
        sig.extend((0..g.n()).map(|v| {
            let mut nb: Vec<usize> = g.neighbors(v).iter().map(|&u| colors[u]).collect();
            nb.sort_unstable();
            (colors[v], nb)
        }));
        let (next, next_classes) = dense_rank(&sig);
        if next_classes == classes {
            break;
        }
        colors = next;
        classes = next_classes;
        rounds += 1;
    }
    WlColoring { colors, rounds }
}

/// Refinement to the coarsest stable (equitable) colouring.
pub fn wl_stable(g: &Graph, init: &[usize]) -> WlColoring {
    wl_refine(g, init, usize::MAX)
}
