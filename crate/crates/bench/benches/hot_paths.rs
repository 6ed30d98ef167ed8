use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kyle_marl::env::{run_episode, MarketGame};
use kyle_marl::exec::optimal_schedule;
use kyle_marl::kyle::solve_kyle;
use kyle_marl::market::{allocate_pro_rata, vwap};
use kyle_marl::ppo::{PolicySet, PpoConfig};
use kyle_marl::strategies::kyle_for_game;
use kyle_marl::{ImpactPath, ResetMode};
use kyle_marl_bench::{full_game, quotes};

fn clearing(c: &mut Criterion) {
    let q = quotes(20);
    c.bench_function("clear_20_makers", |b| {
        b.iter(|| {
            let alloc = allocate_pro_rata(black_box(137.0), &q).unwrap();
            (alloc, vwap(&q).unwrap())
        })
    });
}

fn solvers(c: &mut Criterion) {
    c.bench_function("kyle_solve_n20", |b| {
        b.iter(|| solve_kyle(black_box(1e4), 2500.0, 1.0, 20, 1e-12).unwrap())
    });
    let g = full_game();
    let eq = kyle_for_game(&g).unwrap();
    let path = ImpactPath::new(eq.lambda.clone(), g.mean_reversion, g.risk_aversion);
    c.bench_function("exec_schedule_n20", |b| {
        b.iter(|| optimal_schedule(black_box(&path), g.target_inventory, g.horizon).unwrap())
    });
}

fn episode(c: &mut Criterion) {
    let g = full_game();
    let mut policies = PolicySet::initial(&g, &PpoConfig::default());
    let mut game = MarketGame::new(g).unwrap();
    c.bench_function("episode_full_game_20mm", |b| {
        b.iter(|| run_episode(&mut game, &mut policies, ResetMode::EvalUp).unwrap())
    });
}

criterion_group!(benches, clearing, solvers, episode);
criterion_main!(benches);
