//! Canonical labelling by individualization-refinement.
//!
//! The search tree is the usual one: refine the label colouring to an
//! equitable partition, individualize each vertex of the first non-singleton
//! cell in turn and recurse until the partition is discrete. Every leaf gives
//! a node order and a certificate; the order with the smallest certificate is
//! canonical. Automorphisms discovered between equivalent leaves prune the
//! tree (orbit pruning in the pointwise stabilizer of the current path, and a
//! jump back to the common ancestor when a leaf matches the first or best
//! leaf).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::Graph;

use super::wl::{dense_rank, wl_stable};

pub const DEFAULT_NODE_BOUND: usize = 10_000;
const LEAF_BUDGET: usize = 1_000_000;

/// Certificate of a node order: the upper-triangular adjacency bitstring of
/// the re-ordered graph followed by its label sequence.
///
/// The bitstring is stored sparsely as its sorted list of set positions
/// `(i, j)`, `i < j`; [`Ord`] compares exactly as the dense bitstrings would.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
}

impl Certificate {
    pub fn of_order(g: &Graph, order: &[usize]) -> Self {
        let mut pos = vec![0; g.n()];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        let mut edges: Vec<(usize, usize)> = g
            .edges()
            .map(|(u, v)| {
                let (a, b) = (pos[u], pos[v]);
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        Self {
            n: g.n(),
            edges,
            labels: order.iter().map(|&v| g.node_labels()[v]).collect(),
        }
    }

    fn cmp_bits(&self, other: &Self) -> Ordering {
        for (a, b) in self.edges.iter().zip(&other.edges) {
            match a.cmp(b) {
                Ordering::Equal => continue,
                // the earlier set bit belongs to the larger bitstring
                Ordering::Less => return Ordering::Greater,
                Ordering::Greater => return Ordering::Less,
            }
        }
        self.edges.len().cmp(&other.edges.len())
    }
}

impl Ord for Certificate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then_with(|| self.cmp_bits(other))
            .then_with(|| self.labels.cmp(&other.labels))
    }
}

impl PartialOrd for Certificate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalForm {
    /// `order[i]` is the node placed at canonical position `i`.
    pub order: Vec<usize>,
    pub certificate: Certificate,
    /// Leaves visited by the search.
    pub leaves: usize,
}

impl CanonicalForm {
    /// Canonical position of every node.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (i, &v) in self.order.iter().enumerate() {
            pos[v] = i;
        }
        pos
    }
}

pub fn canonical_form(g: &Graph) -> Result<CanonicalForm> {
    canonical_form_bounded(g, DEFAULT_NODE_BOUND)
}

pub fn canonical_form_bounded(g: &Graph, bound: usize) -> Result<CanonicalForm> {
    if g.n() > bound {
        return Err(Error::Capacity { n: g.n(), bound });
    }
    if g.n() == 0 {
        return Ok(CanonicalForm {
            order: Vec::new(),
            certificate: Certificate::of_order(g, &[]),
            leaves: 0,
        });
    }
    let mut search = Search {
        g,
        first: None,
        best: None,
        autos: Vec::new(),
        leaves: 0,
    };
    let root = wl_stable(g, g.node_labels()).colors;
    search.visit(root, &mut Vec::new())?;
    let (order, certificate, _) = search.best.expect("at least one leaf");
    Ok(CanonicalForm {
        order,
        certificate,
        leaves: search.leaves,
    })
}

struct Search<'a> {
    g: &'a Graph,
    /// (order, certificate, path) of the first leaf.
    first: Option<(Vec<usize>, Certificate, Vec<usize>)>,
    /// (order, certificate, path) of the best leaf so far.
    best: Option<(Vec<usize>, Certificate, Vec<usize>)>,
    autos: Vec<Vec<usize>>,
    leaves: usize,
}

/// Result of exploring a subtree: either finished normally, or an
/// automorphism showed the rest of the tree down to the given depth is
/// already covered.
enum Outcome {
    Done,
    JumpTo(usize),
}

fn common_prefix(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// The permutation mapping `from[i]` to `to[i]`.
fn mapping(from: &[usize], to: &[usize]) -> Vec<usize> {
    let mut p = vec![0; from.len()];
    for (&a, &b) in from.iter().zip(to) {
        p[a] = b;
    }
    p
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl Search<'_> {
    fn visit(&mut self, colors: Vec<usize>, path: &mut Vec<usize>) -> Result<Outcome> {
        let n = self.g.n();
        let classes = colors.iter().max().map_or(0, |&m| m + 1);
        if classes == n {
            return self.leaf(&colors, path);
        }

        // target cell: smallest colour with more than one member
        let mut counts = vec![0usize; classes];
        for &c in &colors {
            counts[c] += 1;
        }
        let target = counts.iter().position(|&c| c > 1).expect("non-discrete");
        let cell: Vec<usize> = (0..n).filter(|&v| colors[v] == target).collect();

        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if !explored.is_empty() && self.in_explored_orbit(v, &explored, path) {
                continue;
            }
            explored.push(v);

            // v takes the lowest rank inside its cell
            let init: Vec<usize> = colors
                .iter()
                .enumerate()
                .map(|(u, &c)| 2 * c + usize::from(c == target && u != v))
                .collect();
            let (init, _) = dense_rank(&init);
            let child = wl_stable(self.g, &init).colors;

            path.push(v);
            let outcome = self.visit(child, path)?;
            path.pop();
            if let Outcome::JumpTo(depth) = outcome {
                if depth < path.len() {
                    return Ok(outcome);
                }
            }
        }
        Ok(Outcome::Done)
    }

    fn leaf(&mut self, colors: &[usize], path: &[usize]) -> Result<Outcome> {
        self.leaves += 1;
        if self.leaves > LEAF_BUDGET {
            return Err(Error::Domain(format!(
                "canonical labelling search exceeded {LEAF_BUDGET} leaves on a graph of {} nodes",
                self.g.n()
            )));
        }
        let mut order = vec![0; colors.len()];
        for (v, &c) in colors.iter().enumerate() {
            order[c] = v;
        }
        let cert = Certificate::of_order(self.g, &order);

        let Some((first_order, first_cert, first_path)) = &self.first else {
            self.first = Some((order.clone(), cert.clone(), path.to_vec()));
            self.best = Some((order, cert, path.to_vec()));
            return Ok(Outcome::Done);
        };
        if *first_cert == cert {
            let auto = mapping(first_order, &order);
            let depth = common_prefix(first_path, path);
            self.autos.push(auto);
            return Ok(Outcome::JumpTo(depth));
        }
        let (best_order, best_cert, best_path) = self.best.as_ref().expect("set with first");
        match cert.cmp(best_cert) {
            Ordering::Equal => {
                let auto = mapping(best_order, &order);
                let depth = common_prefix(best_path, path);
                self.autos.push(auto);
                Ok(Outcome::JumpTo(depth))
            }
            Ordering::Less => {
                self.best = Some((order, cert, path.to_vec()));
                Ok(Outcome::Done)
            }
            Ordering::Greater => Ok(Outcome::Done),
        }
    }

    /// Whether `v` shares an orbit with an explored sibling under the
    /// automorphisms found so far that fix `path` pointwise.
    fn in_explored_orbit(&self, v: usize, explored: &[usize], path: &[usize]) -> bool {
        let n = self.g.n();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut any = false;
        for auto in &self.autos {
            if path.iter().all(|&p| auto[p] == p) {
                any = true;
                for x in 0..n {
                    let (a, b) = (find(&mut parent, x), find(&mut parent, auto[x]));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        if !any {
            return false;
        }
        let root = find(&mut parent, v);
        explored.iter().any(|&e| find(&mut parent, e) == root)
    }
}
