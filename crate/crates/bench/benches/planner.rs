use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use mcpp_bench::{fixture, lattice};
use mcpp_core::{
    sample_transition, select_action, AllocationAction, ExactOracle, ExecState, Mode, PlannerConfig, Shape, StreamKey,
    WorkflowGraph,
};

fn planner_step(c: &mut Criterion) {
    let inst = fixture(12, Shape::DiamondStack, Mode::Empirical, 200_000, 900_000);
    let s0 = ExecState::initial(&inst);
    let mut group = c.benchmark_group("select_action");
    group.sample_size(10);
    for sims in [16, 64] {
        let cfg = PlannerConfig::default().with_sims(sims);
        group.bench_function(format!("diamond12_m{sims}"), |b| {
            b.iter(|| select_action(black_box(&s0), &inst, &cfg, StreamKey::root(3)).unwrap())
        });
    }
    group.finish();
}

fn oracle_solve(c: &mut Criterion) {
    let diamond = WorkflowGraph::new(5, vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)]);
    let inst = lattice(diamond, 20, 10);
    c.bench_function("oracle_value_diamond5", |b| {
        b.iter_batched(
            || ExactOracle::new(&inst, &[1, 2], 4096).unwrap(),
            |o| o.value(&ExecState::initial(&inst)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn transition(c: &mut Criterion) {
    let inst = fixture(8, Shape::Random { p_edge: 0.0 }, Mode::Empirical, 1_000_000, 10_000_000);
    let s0 = ExecState::initial(&inst);
    let action = AllocationAction::homogeneous(inst.graph.all_nodes(), 1, 16);
    let mut rng = StreamKey::root(9).rng();
    c.bench_function("sample_transition_8x16", |b| {
        b.iter(|| sample_transition(black_box(&s0), &action, &inst, &mut rng).unwrap())
    });
}

criterion_group!(benches, planner_step, oracle_solve, transition);
criterion_main!(benches);
