//! Community detection from attitudes (fuzzy c-means) and from graphs
//! (Louvain-style modularity maximization).

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fabric::{FabricError, SocialFabric};
use crate::rng;
use crate::score::ReactionMatrix;
use crate::{CitizenId, CommunityId, ContentId, TopicId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("community {0} is too small to split into principal subcommunities")]
    TooSmall(CommunityId),
    #[error("malformed attitude matrix: {0}")]
    Shape(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

pub type Result<T, E = DetectError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Content(ContentId),
    Topic(TopicId),
}

/// Dense citizens × features matrix of signed attitudes in [-1, 1]; 0 means
/// unobserved or neutral.
#[derive(Clone, Debug, PartialEq)]
pub struct AttitudeMatrix {
    rows: Vec<CitizenId>,
    cols: Vec<Feature>,
    values: Vec<f64>,
}

impl AttitudeMatrix {
    pub fn new(rows: Vec<CitizenId>, cols: Vec<Feature>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != rows.len() {
            return Err(DetectError::Shape(format!(
                "{} rows of values for {} citizens",
                values.len(),
                rows.len()
            )));
        }
        if rows.iter().collect::<BTreeSet<_>>().len() != rows.len() {
            return Err(DetectError::Shape("duplicate citizen rows".into()));
        }
        if cols.iter().collect::<BTreeSet<_>>().len() != cols.len() {
            return Err(DetectError::Shape("duplicate feature columns".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * cols.len());
        for (i, row) in values.into_iter().enumerate() {
            if row.len() != cols.len() {
                return Err(DetectError::Shape(format!("row {i} has {} values, expected {}", row.len(), cols.len())));
            }
            if let Some(v) = row.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(DetectError::Shape(format!("value {v} in row {i} outside [-1, 1]")));
            }
            flat.extend(row);
        }
        Ok(Self {
            rows,
            cols,
            values: flat,
        })
    }

    /// One row per citizen, one column per content any of them reacted to
    /// explicitly. Exposure without reaction stays 0.
    pub fn from_reactions(reactions: &ReactionMatrix, citizens: &[CitizenId]) -> Self {
        let index: BTreeMap<CitizenId, usize> = citizens.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut cols = Vec::new();
        let mut entries = Vec::new();
        for m in reactions.contents() {
            let hits: Vec<(usize, f64)> = reactions
                .records_for(m)
                .filter(|(_, r)| r.reaction.is_explicit())
                .filter_map(|(p, r)| index.get(&p).map(|&i| (i, f64::from(r.reaction.value()))))
                .collect();
            if !hits.is_empty() {
                entries.push((cols.len(), hits));
                cols.push(Feature::Content(m));
            }
        }
        let mut values = vec![0.0; citizens.len() * cols.len()];
        for (j, hits) in entries {
            for (i, v) in hits {
                values[i * cols.len() + j] = v;
            }
        }
        Self {
            rows: citizens.to_vec(),
            cols,
            values,
        }
    }

    pub fn rows(&self) -> &[CitizenId] {
        &self.rows
    }

    pub fn cols(&self) -> &[Feature] {
        &self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols.len();
        &self.values[i * w..(i + 1) * w]
    }

    /// Rows for `citizens` (missing citizens become zero rows), keeping only
    /// columns with at least one nonzero entry among them.
    pub fn restrict(&self, citizens: &[CitizenId]) -> Self {
        let index: BTreeMap<CitizenId, usize> = self.rows.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let src: Vec<Option<usize>> = citizens.iter().map(|p| index.get(p).copied()).collect();
        let keep: Vec<usize> = (0..self.cols.len())
            .filter(|&j| src.iter().flatten().any(|&i| self.row(i)[j] != 0.0))
            .collect();
        let mut values = Vec::with_capacity(citizens.len() * keep.len());
        for s in &src {
            match s {
                Some(i) => values.extend(keep.iter().map(|&j| self.row(*i)[j])),
                None => values.extend(std::iter::repeat_n(0.0, keep.len())),
            }
        }
        Self {
            rows: citizens.to_vec(),
            cols: keep.iter().map(|&j| self.cols[j]).collect(),
            values,
        }
    }

    fn observed(&self, i: usize) -> bool {
        self.row(i).iter().any(|&v| v != 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcmParams {
    pub clusters: usize,
    pub fuzzifier: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl FcmParams {
    pub fn new(clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            fuzzifier: 2.0,
            max_iters: 300,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyPartition {
    pub rows: Vec<CitizenId>,
    /// `memberships[i][k]`, rows in the input's row order.
    pub memberships: Vec<Vec<f64>>,
    pub centroids: Vec<Vec<f64>>,
    pub fuzzifier: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each complete (memberships, centroids) update.
    pub objective_history: Vec<f64>,
}

impl FuzzyPartition {
    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Mean over rows of Σ_k u², in [1/K, 1].
    pub fn partition_coefficient(&self) -> f64 {
        if self.memberships.is_empty() {
            return 0.0;
        }
        let total: f64 = self.memberships.iter().flat_map(|u| u.iter().map(|x| x * x)).sum();
        total / self.memberships.len() as f64
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn argmax(&self, i: usize) -> usize {
        let u = &self.memberships[i];
        (0..u.len()).fold(0, |best, k| if u[k] > u[best] { k } else { best })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(data: &AttitudeMatrix) -> usize {
    let mut rows: Vec<Vec<u64>> = (0..data.n_rows())
        .map(|i| data.row(i).iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort_unstable();
    rows.dedup();
    rows.len()
}

fn fcm_memberships(x: &[f64], centroids: &[Vec<f64>], exponent: f64, out: &mut [f64]) {
    let d: Vec<f64> = centroids.iter().map(|c| sq_dist(x, c)).collect();
    let zeros = d.iter().filter(|&&v| v <= f64::MIN_POSITIVE).count();
    if zeros > 0 {
        for (u, &dk) in out.iter_mut().zip(&d) {
            *u = if dk <= f64::MIN_POSITIVE { 1.0 / zeros as f64 } else { 0.0 };
        }
        return;
    }
    for (k, u) in out.iter_mut().enumerate() {
        let s: f64 = d.iter().map(|&dj| (d[k] / dj).powf(exponent)).sum();
        *u = 1.0 / s;
    }
}

/// Standard fuzzy c-means with k-means++ seeding.
///
/// Rows are processed in citizen-id order, so the result does not depend on
/// how the input rows are arranged.
pub fn fuzzy_c_means(data: &AttitudeMatrix, params: &FcmParams) -> Result<FuzzyPartition> {
    let k = params.clusters;
    if k < 2 {
        return Err(DetectError::InvalidParameter(format!("need at least 2 clusters, got {k}")));
    }
    if !(params.fuzzifier > 1.0 && params.fuzzifier.is_finite()) {
        return Err(DetectError::InvalidParameter(format!(
            "fuzzifier must exceed 1, got {}",
            params.fuzzifier
        )));
    }
    let distinct = distinct_rows(data);
    if distinct <= 1 {
        return Err(DetectError::DegenerateInput("all rows are identical".into()));
    }
    if distinct < k {
        return Err(DetectError::DegenerateInput(format!(
            "{distinct} distinct rows cannot support {k} clusters"
        )));
    }

    let n = data.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| data.rows[i]);
    let points: Vec<&[f64]> = order.iter().map(|&i| data.row(i)).collect();

    let mut rng = rng::seeded(params.seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let m = params.fuzzifier;
    let exponent = 1.0 / (m - 1.0);
    let dim = data.n_cols();
    let mut u = vec![vec![0.0; k]; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        iterations += 1;
        for (x, ui) in points.iter().zip(u.iter_mut()) {
            fcm_memberships(x, &centroids, exponent, ui);
        }
        let mut next = centroids.clone();
        for (c, centroid) in next.iter_mut().enumerate() {
            let mut acc = vec![0.0; dim];
            let mut weight = 0.0;
            for (x, ui) in points.iter().zip(&u) {
                let w = ui[c].powf(m);
                weight += w;
                for (a, v) in acc.iter_mut().zip(x.iter()) {
                    *a += w * v;
                }
            }
            if weight > 0.0 {
                *centroid = acc.into_iter().map(|a| a / weight).collect();
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        history.push(objective(&points, &u, &centroids, m));
        if shift < params.tol {
            converged = true;
            break;
        }
    }

    let mut memberships = vec![Vec::new(); n];
    for (sorted_pos, &orig) in order.iter().enumerate() {
        memberships[orig] = std::mem::take(&mut u[sorted_pos]);
    }
    Ok(FuzzyPartition {
        rows: data.rows.clone(),
        memberships,
        centroids,
        fuzzifier: m,
        iterations,
        converged,
        objective_history: history,
    })
}

fn objective(points: &[&[f64]], u: &[Vec<f64>], centroids: &[Vec<f64>], m: f64) -> f64 {
    points
        .iter()
        .zip(u)
        .map(|(x, ui)| {
            ui.iter()
                .zip(centroids)
                .map(|(&w, c)| w.powf(m) * sq_dist(x, c))
                .sum::<f64>()
        })
        .sum()
}

fn kmeans_pp<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Floating slop can land on a zero-weight tail.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (dist, x) in d2.iter_mut().zip(points) {
            *dist = dist.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectParams {
    pub min_size: usize,
    /// Minimum membership degree for a citizen to join a candidate.
    pub threshold: f64,
    pub k_range: RangeInclusive<usize>,
    pub seed: u64,
    pub fuzzifier: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Independent FCM starts per K; the lowest objective wins.
    pub restarts: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            min_size: 2,
            threshold: 0.5,
            k_range: 2..=7,
            seed: 0,
            fuzzifier: 2.0,
            max_iters: 300,
            tol: 1e-6,
            restarts: 4,
        }
    }
}

/// A detected community: member ids (ascending) with their degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub members: Vec<CitizenId>,
    pub degrees: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub k: usize,
    pub partition_coefficient: f64,
    pub partition: FuzzyPartition,
    pub candidates: Vec<Candidate>,
}

/// Runs FCM over each K in `k_range`, keeps the K with the highest partition
/// coefficient and thresholds its memberships into candidate communities.
pub fn detect_communities(reactions: &AttitudeMatrix, params: &DetectParams) -> Result<Detection> {
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(DetectError::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {}",
            params.threshold
        )));
    }
    if *params.k_range.start() < 2 || params.k_range.is_empty() {
        return Err(DetectError::InvalidParameter(format!("bad K range {:?}", params.k_range)));
    }
    let distinct = distinct_rows(reactions);
    if distinct <= 1 {
        return Err(DetectError::DegenerateInput("all rows are identical".into()));
    }

    let mut best: Option<(f64, FuzzyPartition)> = None;
    for k in params.k_range.clone().filter(|&k| k <= distinct) {
        let mut chosen: Option<FuzzyPartition> = None;
        for restart in 0..params.restarts.max(1) {
            let fcm = FcmParams {
                clusters: k,
                fuzzifier: params.fuzzifier,
                max_iters: params.max_iters,
                tol: params.tol,
                seed: rng::derive_seed(params.seed, &[k as u64, restart as u64]),
            };
            let run = fuzzy_c_means(reactions, &fcm)?;
            if chosen.as_ref().is_none_or(|c| run.objective() < c.objective()) {
                chosen = Some(run);
            }
        }
        let run = chosen.expect("at least one restart");
        let fpc = run.partition_coefficient();
        if best.as_ref().is_none_or(|(b, _)| fpc > *b) {
            best = Some((fpc, run));
        }
    }
    let Some((fpc, partition)) = best else {
        return Err(DetectError::DegenerateInput("no K in range fits the data".into()));
    };

    let mut candidates = Vec::new();
    for k in 0..partition.clusters() {
        let mut picked: Vec<(CitizenId, f64)> = partition
            .rows
            .iter()
            .zip(&partition.memberships)
            .filter(|(_, u)| u[k] >= params.threshold)
            .map(|(&p, u)| (p, u[k]))
            .collect();
        if picked.len() < params.min_size.max(1) {
            continue;
        }
        picked.sort_by_key(|&(p, _)| p);
        candidates.push(Candidate {
            members: picked.iter().map(|&(p, _)| p).collect(),
            degrees: picked.iter().map(|&(_, d)| d).collect(),
        });
    }
    candidates.sort_by(|a, b| a.members.cmp(&b.members));
    Ok(Detection {
        k: partition.clusters(),
        partition_coefficient: fpc,
        partition,
        candidates,
    })
}

/// Splits a community into 2..=7 principal subcommunities by hard argmax
/// over the detected fuzzy partition, stores them in the fabric and
/// returns them (ordered by smallest member id).
pub fn principal_subcommunities(
    fabric: &mut SocialFabric,
    community: CommunityId,
    reactions: &AttitudeMatrix,
    params: &DetectParams,
) -> Result<Vec<BTreeSet<CitizenId>>> {
    let members: Vec<CitizenId> = fabric.community(community)?.members().iter().copied().collect();
    let local = reactions.restrict(&members);
    let observed = (0..local.n_rows()).filter(|&i| local.observed(i)).count();
    if members.len() < 4 || observed < 4 {
        return Err(DetectError::TooSmall(community));
    }

    let params = DetectParams {
        min_size: 1,
        k_range: (*params.k_range.start()).max(2)..=(*params.k_range.end()).min(7),
        ..params.clone()
    };
    let detection = detect_communities(&local, &params)?;
    let part = &detection.partition;
    let mut blocs = vec![BTreeSet::new(); part.clusters()];
    for (i, &p) in part.rows.iter().enumerate() {
        blocs[part.argmax(i)].insert(p);
    }
    blocs.retain(|b| !b.is_empty());
    if blocs.len() < 2 {
        return Err(DetectError::TooSmall(community));
    }
    blocs.sort_by_key(|b| *b.iter().next().expect("non-empty"));
    fabric.set_principal_subcommunities(community, blocs.clone())?;
    Ok(blocs)
}

/// Partitional clustering of a weighted citizen graph by multi-level
/// Louvain modularity maximization at the given resolution.
///
/// Node visiting order is a seeded shuffle; gains tie-break to the smallest
/// community label. Clusters are returned ordered by smallest member.
pub fn graph_cluster(edges: &[(CitizenId, CitizenId, f64)], resolution: f64, seed: u64) -> Vec<BTreeSet<CitizenId>> {
    let nodes: Vec<CitizenId> = edges
        .iter()
        .flat_map(|&(a, b, _)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if nodes.is_empty() {
        return Vec::new();
    }
    let index: BTreeMap<CitizenId, usize> = nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    // adjacency[i]: neighbour -> weight, self loops stored once with full weight
    let mut adjacency: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nodes.len()];
    for &(a, b, w) in edges {
        let (i, j) = (index[&a], index[&b]);
        *adjacency[i].entry(j).or_default() += w;
        if i != j {
            *adjacency[j].entry(i).or_default() += w;
        }
    }

    let mut rng = rng::seeded(seed);
    // node of the original graph -> current super-node
    let mut assignment: Vec<usize> = (0..nodes.len()).collect();
    loop {
        let local = louvain_local_moves(&adjacency, resolution, &mut rng);
        let labels: BTreeSet<usize> = local.iter().copied().collect();
        if labels.len() == adjacency.len() {
            break;
        }
        let relabel: BTreeMap<usize, usize> = labels.into_iter().enumerate().map(|(new, old)| (old, new)).collect();
        for a in assignment.iter_mut() {
            *a = relabel[&local[*a]];
        }
        let mut next: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); relabel.len()];
        for (i, nbrs) in adjacency.iter().enumerate() {
            let ci = relabel[&local[i]];
            for (&j, &w) in nbrs {
                let cj = relabel[&local[j]];
                if ci == cj {
                    // each internal undirected edge is visited from both ends
                    let share = if i == j { w } else { w / 2.0 };
                    *next[ci].entry(ci).or_default() += share;
                } else {
                    *next[ci].entry(cj).or_default() += w;
                }
            }
        }
        adjacency = next;
    }

    let mut clusters: BTreeMap<usize, BTreeSet<CitizenId>> = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        clusters.entry(c).or_default().insert(nodes[i]);
    }
    let mut out: Vec<_> = clusters.into_values().collect();
    out.sort_by_key(|c| *c.iter().next().expect("non-empty"));
    out
}

fn louvain_local_moves<R: Rng>(adjacency: &[BTreeMap<usize, f64>], resolution: f64, rng: &mut R) -> Vec<usize> {
    let n = adjacency.len();
    // Weighted degree; a self loop counts twice.
    let degree: Vec<f64> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().map(|(&j, &w)| if j == i { 2.0 * w } else { w }).sum())
        .collect();
    let two_m: f64 = degree.iter().sum();
    let mut community: Vec<usize> = (0..n).collect();
    if two_m <= 0.0 {
        return community;
    }
    let mut totals = degree.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut moved = true;
    let mut sweeps = 0;
    while moved && sweeps < 100 {
        moved = false;
        sweeps += 1;
        for &i in &order {
            let own = community[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            for (&j, &w) in &adjacency[i] {
                if j != i {
                    *links.entry(community[j]).or_default() += w;
                }
            }
            totals[own] -= degree[i];
            let gain = |c: usize, links_c: f64| links_c - resolution * totals[c] * degree[i] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
            // Ascending labels with a strict comparison: ties go to the
            // current community first, then to the smallest label.
            for (&c, &l) in &links {
                if c == own {
                    continue;
                }
                let g = gain(c, l);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            totals[best] += degree[i];
            if best != own {
                community[i] = best;
                moved = true;
            }
        }
    }
    community
}
