//! Node-ranking procedures that drive node selection and ordering.

mod betweenness;
mod canonical;
mod wl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use betweenness::betweenness_centrality;
pub use canonical::{
    canonical_form, canonical_form_bounded, CanonicalForm, Certificate, DEFAULT_NODE_BOUND,
};
pub use wl::{wl_refine, wl_stable, WlColoring};

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    /// Betweenness centrality, ties broken by WL colour then canonical
    /// position.
    Betweenness,
    /// Betweenness centrality with plain node-index tie-breaking. Not
    /// isomorphism-consistent; kept for fidelity experiments.
    BetweennessNaive,
    /// Canonical labelling order.
    Canonical,
}

impl Procedure {
    pub fn code(self) -> u8 {
        match self {
            Procedure::Betweenness => 0,
            Procedure::Canonical => 1,
            Procedure::BetweennessNaive => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Procedure::Betweenness),
            1 => Some(Procedure::Canonical),
            2 => Some(Procedure::BetweennessNaive),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Procedure::Betweenness => "bc",
            Procedure::BetweennessNaive => "bc-naive",
            Procedure::Canonical => "canonical",
        }
    }

    /// Row label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Procedure::Betweenness => "BC",
            Procedure::BetweennessNaive => "BC (naive ties)",
            Procedure::Canonical => "Canonical",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bc" | "betweenness" => Ok(Procedure::Betweenness),
            "bc-naive" => Ok(Procedure::BetweennessNaive),
            "canonical" | "nauty" => Ok(Procedure::Canonical),
            other => Err(Error::Config(format!(
                "unknown labelling {other:?} (expected bc, canonical)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRanking {
    /// Node indices, most important first.
    pub order: Vec<usize>,
    /// Per-node score (indexed by node, not by rank).
    pub scores: Vec<f64>,
    pub procedure: Procedure,
}

/// Everything the tensorizer needs to order nodes of one graph.
#[derive(Debug, Clone)]
pub struct GraphLabelling {
    pub ranking: NodeRanking,
    /// Stable WL colour per node.
    pub wl: Vec<usize>,
    /// Secondary tie-break per node: canonical position, or the node index
    /// for [`Procedure::BetweennessNaive`].
    pub position: Vec<usize>,
}

/// The canonical order as a ranking; scores decrease along the order.
pub fn canonical_order(g: &Graph) -> Result<NodeRanking> {
    let form = canonical_form(g)?;
    let n = g.n();
    let mut scores = vec![0.0; n];
    for (i, &v) in form.order.iter().enumerate() {
        scores[v] = (n - 1 - i) as f64;
    }
    Ok(NodeRanking {
        order: form.order,
        scores,
        procedure: Procedure::Canonical,
    })
}

pub fn rank_nodes(g: &Graph, procedure: Procedure) -> Result<NodeRanking> {
    Ok(label_graph(g, procedure)?.ranking)
}

pub fn label_graph(g: &Graph, procedure: Procedure) -> Result<GraphLabelling> {
    let n = g.n();
    if procedure == Procedure::BetweennessNaive {
        let scores = betweenness_centrality(g);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        return Ok(GraphLabelling {
            ranking: NodeRanking {
                order,
                scores,
                procedure,
            },
            wl: vec![0; n],
            position: (0..n).collect(),
        });
    }

    let form = canonical_form(g)?;
    let position = form.positions();
    let wl = wl_stable(g, g.node_labels()).colors;
    let ranking = match procedure {
        Procedure::Canonical => {
            let mut scores = vec![0.0; n];
            for (i, &v) in form.order.iter().enumerate() {
                scores[v] = (n - 1 - i) as f64;
            }
            NodeRanking {
                order: form.order,
                scores,
                procedure,
            }
        }
        _ => {
            // Scores are computed on the canonically re-ordered graph so that
            // isomorphic inputs see bit-identical floating point sums.
            let canon = g.reorder(&form.order);
            let canon_scores = betweenness_centrality(&canon);
            let scores: Vec<f64> = (0..n).map(|v| canon_scores[position[v]]).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then(wl[a].cmp(&wl[b]))
                    .then(position[a].cmp(&position[b]))
            });
            NodeRanking {
                order,
                scores,
                procedure,
            }
        }
    };
    Ok(GraphLabelling {
        ranking,
        wl,
        position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(n - 1) {
            for i in 0..n {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn star_center_ranks_first() {
        let g = Graph::new(5, (1..5).map(|l| (l, 0)), vec![0; 5], 0).unwrap();
        let r = rank_nodes(&g, Procedure::Betweenness).unwrap();
        assert_eq!(r.order[0], 0);
        for w in r.order.windows(2) {
            assert!(r.scores[w[0]] >= r.scores[w[1]]);
        }
    }

    #[test]
    fn cycle_order_is_a_permutation() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3), (3, 0)], vec![0; 4], 0).unwrap();
        let mut r = rank_nodes(&g, Procedure::Betweenness).unwrap().order;
        r.sort_unstable();
        assert_eq!(r, vec![0, 1, 2, 3]);
    }

    #[test]
    fn triangle_canonical_order_is_relabelling_consistent() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)], vec![0, 1, 1], 0).unwrap();
        let base = rank_nodes(&g, Procedure::Canonical).unwrap().order;
        let base_labels: Vec<usize> = base.iter().map(|&v| g.node_labels()[v]).collect();
        for perm in all_perms(3) {
            let h = g.relabel(&perm);
            let order = rank_nodes(&h, Procedure::Canonical).unwrap().order;
            let labels: Vec<usize> = order.iter().map(|&v| h.node_labels()[v]).collect();
            assert_eq!(labels, base_labels);
            assert_eq!(h.reorder(&order), g.reorder(&base));
        }
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!("bc".parse::<Procedure>().unwrap(), Procedure::Betweenness);
        assert_eq!("nauty".parse::<Procedure>().unwrap(), Procedure::Canonical);
        assert!("pagerank".parse::<Procedure>().is_err());
        for p in [Procedure::Betweenness, Procedure::BetweennessNaive, Procedure::Canonical] {
            assert_eq!(Procedure::from_code(p.code()), Some(p));
        }
    }
}
