//! Pairwise mutual information between sensor series and the top-1 backup
//! neighbour each sensor falls back on.
//!
//! Estimates use the Kraskov–Stögbauer–Grassberger k-nearest-neighbour
//! estimator (algorithm 1, max-norm, strict counts), in nats:
//!
//! ```text
//! I(X;Y) = psi(k) + psi(N) - < psi(n_x + 1) + psi(n_y + 1) >
//! ```
//!
//! where for each sample `eps` is the distance to its k-th joint neighbour and
//! `n_x`, `n_y` count marginal neighbours strictly closer than `eps`. Each
//! variable is standardised and jittered by a tiny seeded uniform noise to
//! break ties from quantised readings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rng;
use crate::stats::{mean, std_dev};

/// Minimum number of jointly present samples for an estimate.
pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KsgConfig {
    pub k_neighbours: usize,
    /// Jitter amplitude in units of each variable's standard deviation.
    pub noise_amplitude: f64,
}

impl Default for KsgConfig {
    fn default() -> Self {
        Self {
            k_neighbours: 4,
            noise_amplitude: 1e-8,
        }
    }
}

impl KsgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbours == 0 || !(self.noise_amplitude >= 0.0) {
            return Err(Error::Config(
                "ksg needs k_neighbours >= 1 and noise_amplitude >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn standardise(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    let sd = std_dev(xs);
    if !(sd > 0.0) {
        return Err(Error::Degenerate(format!("{what} is constant")));
    }
    let m = mean(xs);
    Ok(xs.iter().map(|x| (x - m) / sd).collect())
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(a.len().cmp(&b.len()))
}

/// Number of entries of sorted `v` strictly inside `(c - eps, c + eps)`.
fn count_within(sorted: &[f64], centre: f64, eps: f64) -> usize {
    let inside = |v: f64| (v - centre).abs() < eps;
    let mut lo = sorted.partition_point(|&v| v <= centre - eps);
    let mut hi = sorted.partition_point(|&v| v < centre + eps);
    // `centre -+ eps` rounds, so settle the edges with the exact distance test
    while lo > 0 && inside(sorted[lo - 1]) {
        lo -= 1;
    }
    while lo < sorted.len() && lo < hi && !inside(sorted[lo]) {
        lo += 1;
    }
    while hi < sorted.len() && inside(sorted[hi]) {
        hi += 1;
    }
    while hi > lo && !inside(sorted[hi - 1]) {
        hi -= 1;
    }
    hi.saturating_sub(lo)
}

/// Max-norm distance to the k-th nearest joint neighbour of every sample.
fn kth_neighbour_distances(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));

    let mut out = vec![0.0; n];
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (pos, &i) in order.iter().enumerate() {
        best.clear();
        let kth = |best: &Vec<f64>| if best.len() == k { best[k - 1] } else { f64::INFINITY };
        let consider = |j: usize, best: &mut Vec<f64>| {
            let d = (x[j] - x[i]).abs().max((y[j] - y[i]).abs());
            if best.len() < k || d < best[best.len() - 1] {
                let at = best.partition_point(|&b| b <= d);
                best.insert(at, d);
                best.truncate(k);
            }
        };
        let (mut left, mut right) = (pos, pos + 1);
        loop {
            let bound = kth(&best);
            let dl = (left > 0).then(|| x[i] - x[order[left - 1]]);
            let dr = (right < n).then(|| x[order[right]] - x[i]);
            let go_left = match (dl, dr) {
                (Some(l), Some(r)) => l <= r,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let gap = if go_left { dl.unwrap() } else { dr.unwrap() };
            if gap > bound {
                break;
            }
            if go_left {
                left -= 1;
                consider(order[left], &mut best);
            } else {
                consider(order[right], &mut best);
                right += 1;
            }
        }
        out[i] = kth(&best);
    }
    out
}

/// KSG (algorithm 1) mutual information estimate in nats. May be slightly
/// negative; not clamped. Symmetric in its arguments for a fixed seed.
pub fn ksg_mi(x: &[f64], y: &[f64], config: &KsgConfig, seed: u64) -> Result<f64> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "ksg inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "ksg needs {MIN_SAMPLES} paired samples, got {n}"
        )));
    }
    let k = config.k_neighbours;
    if k >= n {
        return Err(Error::Config(format!("k = {k} must be below n = {n}")));
    }
    let (a, b) = if lexicographic(y, x).is_lt() { (y, x) } else { (x, y) };

    let mut jitter = rng::stream(seed, &[rng::STREAM_JITTER]);
    let amp = config.noise_amplitude;
    let mut prepare = |v: &[f64], what: &str| -> Result<Vec<f64>> {
        let mut z = standardise(v, what)?;
        if amp > 0.0 {
            for zi in z.iter_mut() {
                *zi += amp * jitter.random_range(-1.0..1.0);
            }
        }
        Ok(z)
    };
    let a = prepare(a, "first variable")?;
    let b = prepare(b, "second variable")?;

    let eps = kth_neighbour_distances(&a, &b, k);
    let mut sa = a.clone();
    sa.sort_by(f64::total_cmp);
    let mut sb = b.clone();
    sb.sort_by(f64::total_cmp);

    let marginal: f64 = (0..n)
        .map(|i| {
            // counts include the sample itself
            let nx = count_within(&sa, a[i], eps[i]).saturating_sub(1);
            let ny = count_within(&sb, b[i], eps[i]).saturating_sub(1);
            digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0)
        })
        .sum::<f64>()
        / n as f64;
    Ok(digamma(k as f64) + digamma(n as f64) - marginal)
}

/// Symmetric matrix of pairwise MI (nats). Entries are `None` on the diagonal
/// and where a pair lacks enough joint samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiMatrix {
    pub sensor_ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub n_samples: Vec<Vec<usize>>,
}

impl MiMatrix {
    pub fn len(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Present off-diagonal entries `(i, j, mi)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |i| {
            (i + 1..self.len()).filter_map(move |j| self.values[i][j].map(|v| (i, j, v)))
        })
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.values {
            for v in row.iter_mut().flatten() {
                *v *= factor;
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sensor_id");
        for id in &self.sensor_ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for (i, id) in self.sensor_ids.iter().enumerate() {
            s.push_str(id);
            for v in &self.values[i] {
                s.push(',');
                if let Some(v) = v {
                    s.push_str(&v.to_string());
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Estimates every unordered sensor pair once on jointly present slots of the
/// raw series.
pub fn mi_matrix(dataset: &Dataset, config: &KsgConfig, seed: u64) -> Result<MiMatrix> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InsufficientData("MI matrix needs at least two sensors".into()));
    }
    let series: Vec<_> = dataset.iter().collect();
    let ids: Vec<String> = series.iter().map(|s| s.sensor_id().to_string()).collect();
    let m = ids.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();

    let estimates: Vec<(usize, usize, usize, Option<f64>)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y): (Vec<f64>, Vec<f64>) = series[i]
                .values()
                .iter()
                .zip(series[j].values())
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .unzip();
            let n = x.len();
            let pair_seed = rng::derive_seed(seed, &[rng::STREAM_JITTER, &ids[i], &ids[j]]);
            let mi = if n >= MIN_SAMPLES {
                match ksg_mi(&x, &y, config, pair_seed) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        log::warn!("MI {} ~ {} unavailable: {e}", ids[i], ids[j]);
                        None
                    }
                }
            } else {
                None
            };
            (i, j, n, mi)
        })
        .collect();

    let mut values = vec![vec![None; m]; m];
    let mut n_samples = vec![vec![0; m]; m];
    for (i, j, n, mi) in estimates {
        values[i][j] = mi;
        values[j][i] = mi;
        n_samples[i][j] = n;
        n_samples[j][i] = n;
    }
    Ok(MiMatrix {
        sensor_ids: ids,
        values,
        n_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backup {
    pub neighbour: String,
    pub mi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighbourMap {
    pub backups: BTreeMap<String, Backup>,
    /// Sensors with no present MI entry.
    pub unbacked: BTreeSet<String>,
}

impl NeighbourMap {
    pub fn neighbour_of(&self, sensor_id: &str) -> Option<&str> {
        self.backups.get(sensor_id).map(|b| b.neighbour.as_str())
    }
}

/// Row argmax over present off-diagonal entries; ties go to the
/// lexicographically smallest sensor id.
pub fn top1_neighbours(matrix: &MiMatrix) -> NeighbourMap {
    let mut map = NeighbourMap::default();
    for (i, id) in matrix.sensor_ids.iter().enumerate() {
        let best = (0..matrix.len())
            .filter(|&j| j != i)
            .filter_map(|j| matrix.values[i][j].map(|v| (&matrix.sensor_ids[j], v)))
            .reduce(|best, cand| {
                if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                    cand
                } else {
                    best
                }
            });
        match best {
            Some((neighbour, mi)) => {
                map.backups.insert(
                    id.clone(),
                    Backup {
                        neighbour: neighbour.clone(),
                        mi,
                    },
                );
            }
            None => {
                map.unbacked.insert(id.clone());
            }
        }
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub mi: f64,
    /// Sensors for which this edge is the selected backup link.
    pub top1_for: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<String>,
    pub edges: Vec<GraphEdge>,
}

impl Graph {
    pub fn build(matrix: &MiMatrix, neighbours: &NeighbourMap) -> Self {
        let edges = matrix
            .edges()
            .map(|(i, j, mi)| {
                let (a, b) = (&matrix.sensor_ids[i], &matrix.sensor_ids[j]);
                let top1_for = [(a, b), (b, a)]
                    .into_iter()
                    .filter(|(from, to)| neighbours.neighbour_of(from) == Some(to.as_str()))
                    .map(|(from, _)| from.clone())
                    .collect();
                GraphEdge {
                    source: a.clone(),
                    target: b.clone(),
                    mi,
                    top1_for,
                }
            })
            .collect();
        Self {
            nodes: matrix.sensor_ids.clone(),
            edges,
        }
    }

    pub fn top1_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| !e.top1_for.is_empty())
    }

    /// DOT rendering; pen width scales with MI, top-1 links drawn bold.
    pub fn to_dot(&self) -> String {
        let max_mi = self.edges.iter().map(|e| e.mi).fold(0.0f64, f64::max);
        let mut s = String::from("graph mi_neighbourhood {\n  node [shape=circle];\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{n}\";");
        }
        for e in &self.edges {
            let width = if max_mi > 0.0 { 0.5 + 4.5 * (e.mi.max(0.0) / max_mi) } else { 0.5 };
            let _ = write!(
                s,
                "  \"{}\" -- \"{}\" [weight={:.6}, penwidth={:.3}",
                e.source, e.target, e.mi, width
            );
            if !e.top1_for.is_empty() {
                let _ = write!(s, ", style=bold, top1=\"{}\"", e.top1_for.join(";"));
            }
            s.push_str("];\n");
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFiles {
    pub dot: PathBuf,
    pub json: PathBuf,
}

/// Writes `<stem>.dot` and the `<stem>.json` sidecar.
pub fn export_graph(matrix: &MiMatrix, neighbours: &NeighbourMap, stem: &Path) -> Result<GraphFiles> {
    let graph = Graph::build(matrix, neighbours);
    let dot = stem.with_extension("dot");
    let json = stem.with_extension("json");
    write_atomic(&dot, graph.to_dot().as_bytes())?;
    let mut body = serde_json::to_vec_pretty(&graph)?;
    body.push(b'\n');
    write_atomic(&json, &body)?;
    Ok(GraphFiles { dot, json })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_start;
    use crate::data::{SensorSeries, TimeGrid};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (a, rho * a + (1.0 - rho * rho).sqrt() * b)
            })
            .unzip()
    }

    /// Brute-force KSG: O(n^2) neighbour search and marginal counts, used as
    /// an independent check of the sorted-sweep implementation.
    fn brute_ksg(x: &[f64], y: &[f64], k: usize) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (x[i] - x[j]).abs().max((y[i] - y[j]).abs()))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let eps = d[k - 1];
            let nx = (0..n).filter(|&j| j != i && (x[i] - x[j]).abs() < eps).count();
            let ny = (0..n).filter(|&j| j != i && (y[i] - y[j]).abs() < eps).count();
            total += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
        }
        digamma(k as f64) + digamma(n as f64) - total / n as f64
    }

    #[test]
    fn sweep_matches_brute_force() {
        for (seed, rho) in [(1, 0.0), (2, 0.6), (3, 0.95)] {
            let (x, y) = gaussian_pair(300, rho, seed);
            let cfg = KsgConfig { k_neighbours: 4, noise_amplitude: 0.0 };
            let fast = ksg_mi(&x, &y, &cfg, 0).unwrap();
            let xs = standardise(&x, "x").unwrap();
            let ys = standardise(&y, "y").unwrap();
            let (a, b) = if lexicographic(&ys, &xs).is_lt() { (ys, xs) } else { (xs, ys) };
            let slow = brute_ksg(&a, &b, 4);
            assert!((fast - slow).abs() < 1e-10, "rho {rho}: {fast} vs {slow}");
        }
    }

    #[test]
    fn estimate_is_exactly_symmetric() {
        let (x, y) = gaussian_pair(500, 0.7, 4);
        let cfg = KsgConfig::default();
        assert_eq!(ksg_mi(&x, &y, &cfg, 9).unwrap().to_bits(), ksg_mi(&y, &x, &cfg, 9).unwrap().to_bits());
    }

    #[test]
    fn independent_uniforms_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let mi = ksg_mi(&x, &y, &KsgConfig::default(), 1).unwrap();
        assert!(mi.abs() < 0.05, "mi {mi}");
    }

    #[test]
    fn rejects_short_and_constant_inputs() {
        let cfg = KsgConfig::default();
        assert!(matches!(ksg_mi(&[1.0; 49], &[2.0; 49], &cfg, 0), Err(Error::InsufficientData(_))));
        let (x, _) = gaussian_pair(100, 0.0, 1);
        assert!(matches!(ksg_mi(&x, &[2.0; 100], &cfg, 0), Err(Error::Degenerate(_))));
        assert!(ksg_mi(&x, &x[..99], &cfg, 0).is_err());
    }

    fn matrix(ids: &[&str], rows: &[&[Option<f64>]]) -> MiMatrix {
        MiMatrix {
            sensor_ids: ids.iter().map(|s| s.to_string()).collect(),
            values: rows.iter().map(|r| r.to_vec()).collect(),
            n_samples: vec![vec![100; ids.len()]; ids.len()],
        }
    }

    #[test]
    fn top1_argmax_ties_and_isolated() {
        let m = matrix(
            &["A", "B", "C", "D"],
            &[
                &[None, Some(0.2), Some(0.9), Some(0.4)],
                &[Some(0.2), None, None, None],
                &[Some(0.9), None, None, None],
                &[Some(0.4), None, None, None],
            ],
        );
        let map = top1_neighbours(&m);
        assert_eq!(map.neighbour_of("A"), Some("C"));

        let m = matrix(
            &["SENS0001", "SENS0003", "SENS0010"],
            &[
                &[None, Some(0.7), Some(0.7)],
                &[Some(0.7), None, None],
                &[Some(0.7), None, None],
            ],
        );
        assert_eq!(top1_neighbours(&m).neighbour_of("SENS0001"), Some("SENS0003"));

        let m = matrix(&["A", "B"], &[&[None, None], &[None, None]]);
        let map = top1_neighbours(&m);
        assert!(map.backups.is_empty());
        assert_eq!(map.unbacked.len(), 2);
        let g = Graph::build(&m, &map);
        assert_eq!(g.nodes.len(), 2);
        assert!(g.edges.is_empty());
    }

    fn dataset(columns: Vec<(&str, Vec<f64>)>) -> Dataset {
        let grid = TimeGrid::new(corpus_start(), columns[0].1.len()).unwrap();
        Dataset::from_series(
            columns
                .into_iter()
                .map(|(id, v)| SensorSeries::from_dense(id, grid, &v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_sensor_matrix_and_graph() {
        let (x, y) = gaussian_pair(400, 0.8, 5);
        let ds = dataset(vec![("A", x), ("B", y)]);
        let m = mi_matrix(&ds, &KsgConfig::default(), 3).unwrap();
        assert_eq!(m.edges().count(), 1);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        let map = top1_neighbours(&m);
        let g = Graph::build(&m, &map);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].top1_for, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn near_duplicate_is_row_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 600;
        let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let copy: Vec<f64> = base.iter().map(|v| v + 1e-3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut cols = vec![("S0", base.clone()), ("S9", copy)];
        for (id, rho) in [("S1", 0.9), ("S2", 0.5), ("S3", 0.0)] {
            let other: Vec<f64> = base
                .iter()
                .map(|v| rho * v + (1.0f64 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            cols.push((id, other));
        }
        let ds = dataset(cols);
        let m = mi_matrix(&ds, &KsgConfig::default(), 1).unwrap();
        let i0 = m.index_of("S0").unwrap();
        let i9 = m.index_of("S9").unwrap();
        let dup = m.get(i0, i9).unwrap();
        for j in 0..m.len() {
            if j != i0 && j != i9 {
                assert!(dup > m.get(i0, j).unwrap());
            }
        }
        assert_eq!(top1_neighbours(&m).neighbour_of("S0"), Some("S9"));
    }

    #[test]
    fn insufficient_overlap_is_absent() {
        let grid = TimeGrid::new(corpus_start(), 100).unwrap();
        let a = SensorSeries::new("A", grid, (0..100).map(|i| (i < 60).then_some(i as f64 * 0.3)).collect()).unwrap();
        let b = SensorSeries::new("B", grid, (0..100).map(|i| (i >= 30).then_some((i as f64).sin())).collect()).unwrap();
        let ds = Dataset::from_series(vec![a, b]).unwrap();
        let m = mi_matrix(&ds, &KsgConfig::default(), 0).unwrap();
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.n_samples[0][1], 30);
    }

    #[test]
    fn export_writes_dot_and_json() {
        let (x, y) = gaussian_pair(200, 0.5, 2);
        let (z, _) = gaussian_pair(200, 0.5, 3);
        let ds = dataset(vec![("A", x), ("B", y), ("C", z)]);
        let m = mi_matrix(&ds, &KsgConfig::default(), 0).unwrap();
        let map = top1_neighbours(&m);
        let dir = tempfile::tempdir().unwrap();
        let files = export_graph(&m, &map, &dir.path().join("mi_graph")).unwrap();
        let dot = std::fs::read_to_string(&files.dot).unwrap();
        assert!(dot.starts_with("graph mi_neighbourhood {"));
        assert_eq!(dot.matches(" -- ").count(), 3);
        let g: Graph = serde_json::from_slice(&std::fs::read(&files.json).unwrap()).unwrap();
        assert_eq!(g.nodes, vec!["A", "B", "C"]);
        assert!(m.to_csv().starts_with("sensor_id,A,B,C\nA,,"));
    }

    proptest::proptest! {
        #[test]
        fn top1_invariant_under_positive_rescaling(
            vals in proptest::collection::vec(proptest::option::weighted(0.8, 0.0f64..2.0), 15),
            factor in 0.01f64..100.0,
        ) {
            let n = 6;
            let mut rows = vec![vec![None; n]; n];
            let mut it = vals.into_iter();
            for i in 0..n {
                for j in i + 1..n {
                    let v = it.next().unwrap();
                    rows[i][j] = v;
                    rows[j][i] = v;
                }
            }
            let m = MiMatrix {
                sensor_ids: (0..n).map(|i| format!("S{i}")).collect(),
                values: rows,
                n_samples: vec![vec![0; n]; n],
            };
            let a = top1_neighbours(&m);
            let b = top1_neighbours(&m.scaled(factor));
            let na: Vec<_> = a.backups.iter().map(|(k, v)| (k.clone(), v.neighbour.clone())).collect();
            let nb: Vec<_> = b.backups.iter().map(|(k, v)| (k.clone(), v.neighbour.clone())).collect();
            proptest::prop_assert_eq!(na, nb);
            proptest::prop_assert_eq!(a.unbacked, b.unbacked);
        }
    }
}
