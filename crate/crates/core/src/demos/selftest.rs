//! Randomized self-check of the forest operations against a sequential
//! evaluation of the global edge list.

use crate::error::{Result, SfError};
use crate::harness::{random_forest, run_ranks, RunConfig};
use crate::scalar::{ReduceOp, Unit};
use crate::sfgraph::{parse_corpus, RankGraph, SetupAlgorithm, SfOptions, StarForest, TwoSidedInfo};

/// A three-rank forest with isolated leaves and zero-degree roots, in the
/// text format.
pub const SAMPLE_FOREST: &str = "\
# rank 0: three roots, four leaves
3 4 0:1.2 1:1.0 2:1.0 3:0.2
# rank 1: four roots, leaf 2 isolated
4 3 0:2.0 1:0.0 3:2.1
# rank 2: two roots, three leaves
2 3 0:0.0 1:1.0 2:1.3
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelftestConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_ranks: usize,
    pub max_vertices: usize,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            seed: 1,
            trials: 50,
            max_ranks: 8,
            max_vertices: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelftestReport {
    pub trials: usize,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Everything one rank computed in one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
struct RankOutput {
    bcast: Vec<i64>,
    reduce: Vec<i64>,
    fetch_roots: Vec<i64>,
    fetch_update: Vec<i64>,
    restored: Vec<i64>,
    degrees: Vec<usize>,
    dense: TwoSidedInfo,
    consensus: TwoSidedInfo,
}

fn root_value(rank: usize, r: usize) -> i64 {
    (rank as i64 + 1) * 1000 + r as i64
}

fn leaf_value(rank: usize, l: usize) -> i64 {
    (rank as i64 + 1) * 100_000 + l as i64 * 7
}

fn rank_body(sf: &StarForest, alt: &StarForest) -> Result<RankOutput> {
    let me = sf.comm().rank();
    let unit = Unit::scalar::<i64>();
    let roots: Vec<i64> = (0..sf.nroots()).map(|r| root_value(me, r)).collect();
    let leaves: Vec<i64> = (0..sf.leaf_extent()).map(|l| leaf_value(me, l)).collect();

    let mut bcast = leaves.clone();
    sf.bcast(unit, &roots, &mut bcast, ReduceOp::Sum)?;
    let mut reduce = roots.clone();
    sf.reduce(unit, &leaves, &mut reduce, ReduceOp::Sum)?;
    let mut fetch_roots = roots.clone();
    let mut fetch_update = vec![0; leaves.len()];
    sf.fetch_and_op(unit, &mut fetch_roots, &leaves, &mut fetch_update, ReduceOp::Sum)?;
    let degrees = sf.compute_degrees()?.degree;
    let mut multi = vec![0i64; degrees.iter().sum()];
    sf.gather(unit, &leaves, &mut multi)?;
    let mut restored = vec![-1i64; leaves.len()];
    sf.scatter(unit, &multi, &mut restored)?;
    Ok(RankOutput {
        bcast,
        reduce,
        fetch_roots,
        fetch_update,
        restored,
        degrees,
        dense: sf.two_sided()?.clone(),
        consensus: alt.two_sided()?.clone(),
    })
}

/// Sequential expectations for every rank.
fn expected(forest: &[RankGraph]) -> Vec<RankOutput> {
    let mut out: Vec<RankOutput> = forest
        .iter()
        .enumerate()
        .map(|(p, g)| {
            let leaves: Vec<i64> = (0..g.leaf_extent()).map(|l| leaf_value(p, l)).collect();
            let roots: Vec<i64> = (0..g.nroots).map(|r| root_value(p, r)).collect();
            let mut restored = vec![-1; leaves.len()];
            for (l, _) in g.edges() {
                restored[l] = leaves[l];
            }
            RankOutput {
                bcast: leaves,
                reduce: roots.clone(),
                fetch_roots: roots,
                fetch_update: vec![0; g.leaf_extent()],
                restored,
                degrees: vec![0; g.nroots],
                dense: TwoSidedInfo::default(),
                consensus: TwoSidedInfo::default(),
            }
        })
        .collect();
    // Edges in the deterministic application order: by root, then leaf rank
    // with the root's own rank first, then leaf index.
    let mut edges: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (q, g) in forest.iter().enumerate() {
        for (l, r) in g.edges() {
            edges.push((r.rank, r.offset, q, l));
        }
    }
    edges.sort_by_key(|&(p, r, q, l)| (p, r, q != p, q, l));
    for &(p, r, q, l) in &edges {
        let rv = root_value(p, r);
        let lv = leaf_value(q, l);
        out[q].bcast[l] += rv;
        out[p].reduce[r] += lv;
        out[q].fetch_update[l] = out[p].fetch_roots[r];
        out[p].fetch_roots[r] += lv;
        out[p].degrees[r] += 1;
    }
    out
}

fn run_forest(forest: Vec<RankGraph>, run: &RunConfig) -> Result<Vec<RankOutput>> {
    let mut run = run.clone();
    run.nranks = forest.len();
    run_ranks(&run, move |ctx| {
        let g = forest[ctx.rank()].clone();
        let dense = SfOptions {
            algorithm: Some(SetupAlgorithm::Dense),
            ..SfOptions::default()
        };
        let consensus = SfOptions {
            algorithm: Some(SetupAlgorithm::Consensus),
            ..SfOptions::default()
        };
        let sf = StarForest::from_graph(&ctx.comm, g.clone(), dense)?;
        let alt = StarForest::from_graph(&ctx.comm, g, consensus)?;
        rank_body(&sf, &alt)
    })
    .map_err(|e| SfError::Run(e.to_string()))
}

fn compare(label: &str, got: &[RankOutput], want: &[RankOutput], report: &mut SelftestReport) {
    for (rank, (g, w)) in got.iter().zip(want).enumerate() {
        let checks: [(&str, bool); 7] = [
            ("bcast", g.bcast == w.bcast),
            ("reduce", g.reduce == w.reduce),
            ("fetch-and-op roots", g.fetch_roots == w.fetch_roots),
            ("fetch-and-op updates", g.fetch_update == w.fetch_update),
            ("gather/scatter", g.restored == w.restored),
            ("degrees", g.degrees == w.degrees),
            ("dense vs consensus setup", g.dense == g.consensus),
        ];
        for (name, ok) in checks {
            report.checks += 1;
            if !ok {
                report.failures.push(format!("{label}, rank {rank}: {name} mismatch"));
            }
        }
    }
}

/// Runs the sample forest and `config.trials` random forests.
pub fn run_selftest(config: &SelftestConfig, run: &RunConfig) -> Result<SelftestReport> {
    let mut report = SelftestReport::default();
    let sample = parse_corpus(SAMPLE_FOREST)?.remove(0);
    let want = expected(&sample);
    compare("sample forest", &run_forest(sample, run)?, &want, &mut report);
    for t in 0..config.trials {
        let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(t as u64);
        let nranks = 2 + (seed as usize % config.max_ranks.saturating_sub(1).max(1));
        let forest = random_forest(seed, nranks, config.max_vertices);
        let want = expected(&forest);
        let label = format!("trial {t} (seed {seed}, {nranks} ranks)");
        match run_forest(forest, run) {
            Ok(got) => compare(&label, &got, &want, &mut report),
            Err(e) => report.failures.push(format!("{label}: {e}")),
        }
        report.trials += 1;
    }
    Ok(report)
}
