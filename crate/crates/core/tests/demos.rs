use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starforest::demos::matrix::{build_ghost_sf, spmv, spmv_transpose, CooMatrix};
use starforest::demos::pingpong::{pingpong_sf, run_pingpong, sweep, to_csv, PingPongConfig, CSV_HEADER};
use starforest::demos::selftest::{run_selftest, SelftestConfig, SAMPLE_FOREST};
use starforest::demos::submatrix::{column_selection_sf, select_submatrix_columns, UNSELECTED};
use starforest::sfgraph::parse_forest;
use starforest::{
    run_ranks, Backend, GhostVector, Layout, RankGraph, RootRef, RunConfig, SfError, SfOptions, SplitMatrix,
    SplitMatrixF64, SplitMatrixI64, StarForest,
};

fn x_value(i: usize) -> f64 {
    ((i * 37) % 23) as f64 / 7.0 - 1.5
}

fn dense_product(m: &CooMatrix<f64>, x: &[f64], transpose: bool) -> Vec<f64> {
    let mut y = vec![0.0; if transpose { m.ncols } else { m.nrows }];
    for &(r, c, v) in &m.entries {
        if transpose {
            y[c] += v * x[r];
        } else {
            y[r] += v * x[c];
        }
    }
    y
}

/// Distributed `M x` or `Mᵀ x`, assembled in global order.
fn distributed_product(m: &CooMatrix<f64>, nranks: usize, transpose: bool, backend: Backend) -> Vec<f64> {
    let global = m.clone();
    let parts = run_ranks(&RunConfig::new(nranks).backend(backend), move |ctx| {
        let comm = &ctx.comm;
        let sm = SplitMatrixF64::distribute(comm, (comm.rank() == 0).then_some(&global))?;
        let sf = build_ghost_sf(comm, &sm)?;
        if transpose {
            let x: Vec<f64> = sm.rows.range(sm.rank).map(x_value).collect();
            let mut y = GhostVector::for_matrix(&sm, vec![0.0; sm.local_cols()]);
            spmv_transpose(&sf, &sm, &x, &mut y)?;
            Ok(y.owned)
        } else {
            let mut x = GhostVector::for_matrix(&sm, sm.cols.range(sm.rank).map(x_value).collect());
            let mut y = vec![0.0; sm.local_rows()];
            spmv(&sf, &sm, &mut x, &mut y)?;
            Ok(y)
        }
    })
    .unwrap();
    parts.concat()
}

fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
    got.iter().zip(want).fold(0.0, |a, (g, w)| a.max((g - w).abs() / scale))
}

#[test]
fn ghost_layout_two_ranks() {
    let out = run_ranks(&RunConfig::new(2), |ctx| {
        let rows = Layout::balanced(4, 2);
        let triplets: Vec<(usize, usize, i64)> = if ctx.rank() == 0 { vec![(0, 0, 1), (1, 3, 2)] } else { vec![(2, 2, 1)] };
        let m = SplitMatrixI64::from_triplets(ctx.rank(), rows.clone(), rows, &triplets)?;
        let sf = build_ghost_sf(&ctx.comm, &m)?;
        Ok((m.garray.clone(), sf.graph().leaf_remote.clone()))
    })
    .unwrap();
    assert_eq!(out[0].0, vec![3]);
    assert_eq!(out[0].1, vec![RootRef::new(1, 1)]);
    assert!(out[1].1.is_empty());
}

#[test]
fn layouts() {
    let l = Layout::balanced(10, 3);
    assert_eq!((0..3).map(|r| l.local_size(r)).collect::<Vec<_>>(), vec![4, 3, 3]);
    assert_eq!(l.owner(4), Some((1, 0)));
    assert_eq!(l.owner(10), None);
    let s = Layout::from_sizes(&[0, 2, 5]);
    assert_eq!(s.range(2), 2..7);
    assert_eq!(s.global_size(), 7);
    assert_eq!(s.nranks(), 3);
}

#[test]
fn identity_and_laplacian() {
    let id = CooMatrix::<f64>::identity(13);
    let x: Vec<f64> = (0..13).map(x_value).collect();
    assert_eq!(distributed_product(&id, 3, false, Backend::Threads), x);
    let lap = CooMatrix::<f64>::laplacian_2d(16, 16);
    let x: Vec<f64> = (0..256).map(x_value).collect();
    let want = dense_product(&lap, &x, false);
    for nranks in 1..=4 {
        assert!(max_rel_err(&distributed_product(&lap, nranks, false, Backend::Threads), &want) <= 1e-12);
        assert!(max_rel_err(&distributed_product(&lap, nranks, true, Backend::OneSided), &want) <= 1e-12);
    }
}

#[test]
fn random_matrices_and_transposes() {
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nr, nc) = if seed % 3 == 0 { (64, 64) } else { (rng.gen_range(1..40), rng.gen_range(1..40)) };
        let m = CooMatrix::<f64>::random(seed, nr, nc, rng.gen_range(0.02..0.3));
        let nranks = 1 + seed as usize % 4;
        for transpose in [false, true] {
            let n_in = if transpose { nr } else { nc };
            let x: Vec<f64> = (0..n_in).map(x_value).collect();
            let want = dense_product(&m, &x, transpose);
            let got = distributed_product(&m, nranks, transpose, Backend::Threads);
            assert!(max_rel_err(&got, &want) <= 1e-12, "seed {seed} transpose {transpose}");
        }
    }
}

#[test]
fn integer_products_are_exact() {
    for seed in 0..10u64 {
        let m = CooMatrix::<i64>::random(seed, 30, 30, 0.15);
        let global = m.clone();
        let parts = run_ranks(&RunConfig::new(3), move |ctx| {
            let sm = SplitMatrix::distribute(&ctx.comm, (ctx.rank() == 0).then_some(&global))?;
            let sf = build_ghost_sf(&ctx.comm, &sm)?;
            let mut x = GhostVector::for_matrix(&sm, sm.cols.range(sm.rank).map(|i| i as i64 - 7).collect());
            let mut y = vec![0i64; sm.local_rows()];
            spmv(&sf, &sm, &mut x, &mut y)?;
            Ok(y)
        })
        .unwrap();
        let mut want = vec![0i64; 30];
        for &(r, c, v) in &m.entries {
            want[r] += v * (c as i64 - 7);
        }
        assert_eq!(parts.concat(), want);
    }
}

#[test]
fn spmv_checks_lengths() {
    let out = run_ranks(&RunConfig::new(1), |ctx| {
        let m = SplitMatrix::distribute(&ctx.comm, Some(&CooMatrix::<f64>::identity(3)))?;
        let sf = build_ghost_sf(&ctx.comm, &m)?;
        let mut x = GhostVector::new(vec![1.0; 2], 0);
        Ok(matches!(spmv(&sf, &m, &mut x, &mut [0.0; 3]), Err(SfError::LengthMismatch { .. })))
    })
    .unwrap();
    assert_eq!(out, vec![true]);
}

#[test]
fn matrix_market_variants() {
    let general = "%%MatrixMarket matrix coordinate real general\n% comment\n3 2 2\n1 1 2.5\n3 2 -1\n";
    let m = CooMatrix::<f64>::parse_matrix_market(general).unwrap();
    assert_eq!((m.nrows, m.ncols), (3, 2));
    assert_eq!(m.entries, vec![(0, 0, 2.5), (2, 1, -1.0)]);
    let sym = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4\n2 1 3\n";
    let mut e = CooMatrix::<f64>::parse_matrix_market(sym).unwrap().entries;
    e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    assert_eq!(e, vec![(0, 0, 4.0), (0, 1, 3.0), (1, 0, 3.0)]);
    let pattern = "%%MatrixMarket matrix coordinate pattern general\n2 2 1\n2 2\n";
    assert_eq!(CooMatrix::<i64>::parse_matrix_market(pattern).unwrap().entries, vec![(1, 1, 1)]);
    for bad in ["", "%%MatrixMarket matrix array real general\n1 1\n1\n", "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n"] {
        assert!(CooMatrix::<f64>::parse_matrix_market(bad).is_err(), "{bad:?}");
    }
}

/// Selection lists per rank and the expected new index of every column of
/// `reduced` (max over duplicates, `UNSELECTED` when absent).
fn selection_oracle(selected: &[Vec<usize>], reduced: &[usize]) -> Vec<i64> {
    let flat: Vec<usize> = selected.concat();
    reduced
        .iter()
        .map(|g| {
            flat.iter()
                .enumerate()
                .filter(|(_, c)| *c == g)
                .map(|(k, _)| k as i64)
                .max()
                .unwrap_or(UNSELECTED)
        })
        .collect()
}

#[test]
fn submatrix_selection_matches_membership() {
    for seed in 0..30u64 {
        let nranks = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ncols = rng.gen_range(1..50);
        let cols = Layout::balanced(ncols, nranks);
        let mut all: Vec<usize> = (0..ncols).collect();
        all.shuffle(&mut rng);
        let nsel = rng.gen_range(0..=ncols);
        let mut selected: Vec<Vec<usize>> = vec![Vec::new(); nranks];
        for &c in &all[..nsel] {
            selected[rng.gen_range(0..nranks)].push(c);
        }
        let reduced: Vec<Vec<usize>> = (0..nranks)
            .map(|_| (0..ncols).filter(|_| rng.gen_bool(0.3)).collect())
            .collect();
        let (s2, r2, c2) = (selected.clone(), reduced.clone(), cols.clone());
        let out = run_ranks(&RunConfig::new(nranks), move |ctx| {
            let me = ctx.rank();
            let (sf_b, first) = column_selection_sf(&ctx.comm, &c2, &s2[me])?;
            let graph = RankGraph {
                nroots: c2.local_size(me),
                leaf_local: None,
                leaf_remote: r2[me].iter().map(|&g| {
                    let (r, o) = c2.owner(g).unwrap();
                    RootRef::new(r, o)
                }).collect(),
            };
            let sf_a = StarForest::from_graph(&ctx.comm, graph, SfOptions::default())?;
            select_submatrix_columns(&sf_a, &sf_b, first)
        })
        .unwrap();
        for p in 0..nranks {
            assert_eq!(out[p], selection_oracle(&selected, &reduced[p]), "seed {seed} rank {p}");
        }
    }
}

#[test]
fn pingpong_csv_and_integrity() {
    let config = PingPongConfig {
        sizes: sweep(1 << 10, 64 << 10, 4),
        iters: 3,
        warmup: 1,
    };
    for backend in [Backend::Threads, Backend::OneSided, Backend::Sockets] {
        let report = run_pingpong(&config, &RunConfig::new(2).backend(backend)).unwrap();
        let csv = to_csv(&report.rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let sizes: Vec<usize> = lines
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                assert_eq!(f.len(), 5);
                assert_eq!(f[1], backend.name());
                assert_eq!(f[2], "3");
                let (med, min): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
                assert!(min > 0.0 && min <= med);
                f[0].parse().unwrap()
            })
            .collect();
        assert_eq!(sizes, vec![1024, 4096, 16384, 65536]);
        for stats in report.pack_stats.iter().flatten() {
            assert_eq!((stats.root_side, stats.leaf_side), (0, 0));
        }
    }
}

#[test]
fn pingpong_sweep_and_rank_count() {
    assert_eq!(sweep(1 << 10, 4 << 20, 4), vec![1 << 10, 4 << 10, 16 << 10, 64 << 10, 256 << 10, 1 << 20, 4 << 20]);
    assert_eq!(sweep(8, 7, 2), Vec::<usize>::new());
    let out = run_ranks(&RunConfig::new(3), |ctx| Ok(matches!(pingpong_sf(&ctx.comm, 8), Err(SfError::Precondition(_))))).unwrap();
    assert_eq!(out, vec![true; 3]);
}

#[test]
fn selftest_passes() {
    assert_eq!(parse_forest(SAMPLE_FOREST).unwrap().len(), 3);
    let config = SelftestConfig {
        seed: 3,
        trials: 10,
        ..SelftestConfig::default()
    };
    for backend in [Backend::Threads, Backend::OneSided] {
        let report = run_selftest(&config, &RunConfig::new(2).backend(backend)).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.trials, 10);
        assert!(report.checks > 0);
    }
}
