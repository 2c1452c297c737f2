use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wsr_bench::{fixture, shaped, warm_aux, warm_reduced_aux};
use wsr_core::{baselines, papc, rwmmse, wmmse, GramContext};

const SIZES: [usize; 3] = [64, 128, 256];

fn spc_updates(c: &mut Criterion) {
    let mut g = c.benchmark_group("spc_update");
    for m in SIZES {
        let (ch, cfg) = fixture(m, 0);
        let aux = warm_aux(&ch, &cfg);
        g.bench_with_input(BenchmarkId::new("wmmse_p", m), &m, |b, _| {
            b.iter(|| wmmse::update_p_spc(black_box(&ch), &aux, &cfg).unwrap())
        });
        let gram = GramContext::from_channel(&ch).unwrap();
        let raux = warm_reduced_aux(&ch, &gram, &cfg);
        g.bench_with_input(BenchmarkId::new("rwmmse_x_compact", m), &m, |b, _| {
            b.iter(|| rwmmse::update_x_compact(black_box(&gram), &raux, &cfg).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("gram", m), &m, |b, _| b.iter(|| GramContext::from_channel(black_box(&ch)).unwrap()));
    }
    g.finish();
}

fn woodbury(c: &mut Criterion) {
    // N = D, where the recursion applies.
    let mut g = c.benchmark_group("x_update_square");
    let (ch, cfg) = shaped(64, 8, 2, 2, 0);
    let gram = GramContext::from_channel(&ch).unwrap().with_inverse().unwrap();
    let aux = warm_reduced_aux(&ch, &gram, &cfg);
    g.bench_function("compact", |b| b.iter(|| rwmmse::update_x_compact(black_box(&gram), &aux, &cfg).unwrap()));
    g.bench_function("woodbury", |b| b.iter(|| rwmmse::update_x_woodbury(black_box(&gram), &aux, &cfg).unwrap()));
    g.finish();
}

fn papc_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("papc_sweep");
    for m in SIZES {
        let (ch, cfg) = fixture(m, 0);
        let p0 = baselines::normalize_papc(&wmmse::zf_init(&ch, &cfg).unwrap(), &cfg.antenna_budgets).unwrap();
        let aux = warm_aux(&ch, &cfg);
        let y = ch.h() * p0.matrix();
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| {
                let mut ws = papc::SweepWorkspace::new(&aux, &cfg, &y);
                let mut ph = p0.matrix().adjoint();
                papc::sweep_antennas(&mut ws, &ch, &mut ph, &cfg.antenna_budgets);
                ph
            })
        });
    }
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    let (ch, cfg) = fixture(64, 0);
    let init = wmmse::zf_init(&ch, &cfg).unwrap();
    let papc_init = baselines::normalize_papc(&init, &cfg.antenna_budgets).unwrap();
    g.bench_function("wmmse", |b| b.iter(|| wmmse::solve(&ch, &cfg, black_box(&init)).unwrap()));
    g.bench_function("r-wmmse", |b| b.iter(|| rwmmse::solve(&ch, &cfg, black_box(&init), rwmmse::XUpdate::Auto).unwrap()));
    g.bench_function("papc-wmmse", |b| b.iter(|| papc::solve(&ch, &cfg, black_box(&papc_init)).unwrap()));
    g.finish();
}

criterion_group!(benches, spc_updates, woodbury, papc_sweep, end_to_end);
criterion_main!(benches);
