//! Built-in correctness suites and the reference oracles they use.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng as _;

use crate::error::Result;
use crate::graph::Graph;
use crate::labelling::canonical_form;
use crate::labelling::{betweenness_centrality, Procedure};
use crate::models::{batch_input, build_capsnet, CapsNetConfig, LossMode, Model};
use crate::nn::gradcheck::{grad_check, REL_FLOOR};
use crate::nn::routing::dynamic_routing;
use crate::nn::{Tape, Tensor};
use crate::rng::{self, Rng};
use crate::tensorizer::{graph_to_tensor, GraphTensor, TensorGeometry};

/// Random labelled graph with edge probability `p`.
pub fn random_graph(n: usize, p: f64, labels: usize, r: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let lab = (0..n).map(|_| r.random_range(0..labels.max(1))).collect();
    Graph::new(n, edges, lab, 0).expect("valid random graph")
}

/// Random connected graph: a random tree plus extra edges.
pub fn random_connected_graph(n: usize, extra: f64, r: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((r.random_range(0..v), v));
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if r.random::<f64>() < extra {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges, vec![0; n], 0).expect("valid random graph")
}

/// Betweenness by explicit enumeration of every shortest path between every
/// unordered pair.
pub fn brute_force_betweenness(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let dist: Vec<Vec<Option<usize>>> = (0..n).map(|s| bfs(g, s)).collect();
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in (s + 1)..n {
            let Some(d) = dist[s][t] else { continue };
            let mut paths = Vec::new();
            let mut path = vec![s];
            enumerate(g, &dist, t, d, &mut path, &mut paths);
            let total = paths.len() as f64;
            let mut through = vec![0usize; n];
            for p in &paths {
                for &v in &p[1..p.len() - 1] {
                    through[v] += 1;
                }
            }
            for v in 0..n {
                bc[v] += through[v] as f64 / total;
            }
        }
    }
    bc
}

fn bfs(g: &Graph, s: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; g.n()];
    d[s] = Some(0);
    let mut queue = std::collections::VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    d
}

fn enumerate(
    g: &Graph,
    dist: &[Vec<Option<usize>>],
    t: usize,
    len: usize,
    path: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    let u = *path.last().unwrap();
    if u == t {
        out.push(path.clone());
        return;
    }
    let step = path.len();
    for &v in g.neighbors(u) {
        // v must lie on a shortest path: one step further from s, and
        // exactly the remaining distance from t.
        if dist[path[0]][v] == Some(step) && dist[v][t] == Some(len - step) {
            path.push(v);
            enumerate(g, dist, t, len, path, out);
            path.pop();
        }
    }
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Every simple graph on `n` unlabelled-class nodes, one per edge subset.
pub fn all_graphs(n: usize) -> Vec<Graph> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| ((u + 1)..n).map(move |v| (u, v))).collect();
    (0u64..(1 << pairs.len()))
        .map(|mask| {
            let edges = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e);
            Graph::new(n, edges, vec![0; n], 0).expect("valid")
        })
        .collect()
}

/// Isomorphism by trying every bijection.
pub fn brute_isomorphic(a: &Graph, b: &Graph) -> bool {
    if a.n() != b.n() || a.num_edges() != b.num_edges() {
        return false;
    }
    permutations(a.n()).iter().any(|p| {
        (0..a.n()).all(|v| a.node_labels()[v] == b.node_labels()[p[v]])
            && a.edges().all(|(u, v)| b.has_edge(p[u], p[v]))
    })
}

/// Largest relative gradient error of the full capsule loss on a tiny
/// `4 × 3 × 3` geometry with a 4-graph batch.
pub fn capsnet_gradient_error(mode: LossMode, seed: u64) -> Result<f64> {
    let g = TensorGeometry { w: 4, k: 3, d: 2 };
    let cfg = CapsNetConfig {
        conv_filters: 4,
        conv_kernel: (2, 2),
        primary_channels: 2,
        primary_dim: 4,
        primary_kernel: (2, 2),
        primary_stride: 1,
        caps_dim: 4,
        decoder: vec![8],
        caps_init_std: 0.3,
        loss_mode: mode,
        ..CapsNetConfig::small()
    };
    let m = build_capsnet(g, 2, cfg, seed)?;
    let mut r = rng::seeded(seed ^ 0x5eed);
    let xs: Vec<GraphTensor> = (0..4)
        .map(|i| {
            let mut data = vec![0f32; g.len()];
            for f in data.chunks_exact_mut(g.channels()) {
                f[r.random_range(0..g.channels())] = 1.0;
            }
            GraphTensor {
                geometry: g,
                data,
                graph_index: i,
                class_label: i % 2,
            }
        })
        .collect();
    let refs: Vec<&GraphTensor> = xs.iter().collect();
    let targets: Vec<usize> = xs.iter().map(|t| t.class_label).collect();
    let x = batch_input(&refs, g)?;
    let point = m.params.flatten();
    let f = |p: &[f64]| {
        let mut local = m.clone();
        local.params.set_flat(p);
        let model = Model::Caps(local);
        let mut tape = Tape::new();
        let pv: Vec<_> = model.params().tensors().iter().map(|t| tape.param(t.clone())).collect();
        let mut dummy = rng::seeded(0);
        let l = model
            .loss(&mut tape, &pv, x.clone(), &targets, &mut dummy)
            .expect("tiny model loss");
        let mut gr = tape.backward(l.total);
        let grad: Vec<f64> = pv
            .iter()
            .zip(model.params().tensors())
            .flat_map(|(&v, t)| gr.take_or_zeros(v, t.shape()).into_data())
            .collect();
        (tape.value(l.total).item(), grad)
    };
    // Smaller steps let round-off dominate on the ~1e-7 gradient entries.
    Ok(grad_check(f, &point, 1e-4, REL_FLOOR))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Names accepted by the fault-injection hook.
pub const SUITES: [&str; 6] = [
    "betweenness-oracle",
    "canonical-invariance",
    "tensor-invariance",
    "gradient-check",
    "routing-sums",
    "loss-identities",
];

/// Runs every suite. `fault` names a suite whose kernel output is
/// deliberately corrupted, to prove the suite can fail.
pub fn run_selftest(fault: Option<&str>) -> Vec<SuiteReport> {
    let suites: [(&'static str, fn(bool) -> (bool, String)); 6] = [
        (SUITES[0], betweenness_suite),
        (SUITES[1], canonical_suite),
        (SUITES[2], tensor_suite),
        (SUITES[3], gradient_suite),
        (SUITES[4], routing_suite),
        (SUITES[5], loss_suite),
    ];
    suites
        .iter()
        .map(|&(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f(fault == Some(name));
            SuiteReport {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn betweenness_suite(fault: bool) -> (bool, String) {
    let mut r = rng::seeded(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(1..=8);
        let g = random_connected_graph(n, 0.3, &mut r);
        let mut got = betweenness_centrality(&g);
        if fault {
            got.iter_mut().for_each(|v| *v = *v * 1.01 + 0.01);
        }
        let want = brute_force_betweenness(&g);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst <= 1e-9, format!("200 graphs, max |error| {worst:.2e}"))
}

fn canonical_suite(fault: bool) -> (bool, String) {
    let graphs = all_graphs(4);
    let perms = permutations(4);
    // Isomorphism classes by brute force.
    let mut reps: Vec<Graph> = Vec::new();
    let mut class_of = Vec::with_capacity(graphs.len());
    for g in &graphs {
        match reps.iter().position(|r| brute_isomorphic(r, g)) {
            Some(c) => class_of.push(c),
            None => {
                class_of.push(reps.len());
                reps.push(g.clone());
            }
        }
    }
    let mut certs = vec![HashSet::new(); reps.len()];
    for (gi, g) in graphs.iter().enumerate() {
        for (pi, p) in perms.iter().enumerate() {
            let h = g.relabel(p);
            let mut c = match canonical_form(&h) {
                Ok(c) => c.certificate,
                Err(e) => return (false, e.to_string()),
            };
            if fault && gi == 11 && pi == 5 {
                c.edges.clear();
            }
            certs[class_of[gi]].insert(c);
        }
    }
    let within = certs.iter().all(|s| s.len() == 1);
    let distinct: HashSet<_> = certs.iter().filter_map(|s| s.iter().next()).collect();
    let across = distinct.len() == reps.len();
    (
        within && across && reps.len() == 11,
        format!(
            "{} graphs x {} relabellings, {} classes, one certificate per class: {}",
            graphs.len(),
            perms.len(),
            reps.len(),
            within && across
        ),
    )
}

fn tensor_suite(fault: bool) -> (bool, String) {
    let mut r = rng::seeded(77);
    let mut failures = 0;
    for _ in 0..30 {
        let n = r.random_range(1..=12);
        let g = random_graph(n, 0.3, 3, &mut r);
        let geometry = TensorGeometry { w: 6, k: 4, d: 3 };
        for proc in [Procedure::Canonical, Procedure::Betweenness] {
            let base = graph_to_tensor(&g, geometry, proc).expect("tensorize");
            for s in 0..3u64 {
                let h = crate::dataset::permute_node_ids(&g, r.random::<u64>() ^ s);
                let mut t = graph_to_tensor(&h, geometry, proc).expect("tensorize");
                if fault {
                    t.data[0] += 1.0;
                }
                failures += usize::from(t.data != base.data);
            }
        }
    }
    (failures == 0, format!("30 graphs x 3 permutations x 2 labellings, {failures} mismatches"))
}

fn gradient_suite(fault: bool) -> (bool, String) {
    let mut worst = 0.0f64;
    for (i, mode) in [LossMode::BinaryCe, LossMode::MarginMulticlass].into_iter().enumerate() {
        match capsnet_gradient_error(mode, 100 + i as u64) {
            Ok(e) => worst = worst.max(e),
            Err(e) => return (false, e.to_string()),
        }
    }
    // Squash against its closed form derivative through the tape.
    let v = [0.3, -1.2, 0.5];
    let f = |x: &[f64]| {
        let mut t = Tape::new();
        let xv = t.param(Tensor::new(&[3], x.to_vec()).expect("shape"));
        let s = t.squash(xv);
        let loss = t.mse(s, Tensor::new(&[3], vec![0.1, 0.2, 0.3]).expect("shape")).expect("mse");
        let mut g = t.backward(loss);
        let mut grad = g.take_or_zeros(xv, &[3]).into_data();
        if fault {
            grad[0] *= 1.01;
        }
        (t.value(loss).item(), grad)
    };
    worst = worst.max(grad_check(f, &v, 1e-5, REL_FLOOR));
    (worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn routing_suite(fault: bool) -> (bool, String) {
    let mut r = rng::seeded(5);
    let mut worst = 0.0f64;
    for iters in 1..=5 {
        for _ in 0..10 {
            let (i, j, d) = (r.random_range(1..6), r.random_range(1..5), r.random_range(1..5));
            let u = Tensor::from_fn(&[i, j, d], |_| r.random_range(-2.0..2.0));
            let out = match dynamic_routing(&u, iters) {
                Ok(o) => o,
                Err(e) => return (false, e.to_string()),
            };
            for c in &out.couplings {
                for row in c.data().chunks_exact(j) {
                    let mut s: f64 = row.iter().sum();
                    if fault {
                        s += 1e-6;
                    }
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    (worst <= 1e-9, format!("max |row sum - 1| {worst:.2e}"))
}

fn loss_suite(fault: bool) -> (bool, String) {
    use crate::nn::loss::{margin_loss, total_loss};
    let bump = if fault { 1e-3 } else { 0.0 };
    let checks = [
        (margin_loss(&[0.9, 0.1], 0, 0.5) + bump, 0.0),
        (margin_loss(&[0.0, 0.0], 0, 0.5), 0.81),
        (margin_loss(&[0.9, 1.0], 0, 0.5), 0.405),
        (total_loss(0.3, 0.2, 0.5), 0.4),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (worst < 1e-12, format!("{} identities, max |error| {worst:.2e}", checks.len()))
}
