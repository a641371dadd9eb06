use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kbestnet::eval::{random_gold_network, sample};
use kbestnet::oracle::Oracle;
use kbestnet::scoring::all_local_scores;
use kbestnet::{kbest_networks, Dataset, Exec, MemoryBudget, ParentTable};

const STRATEGIES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];
const BUDGET: MemoryBudget = MemoryBudget::UNLIMITED;

fn data(n: usize, m: usize) -> Dataset {
    let gold = random_gold_network(n, 3.min(n - 1), 42).unwrap();
    sample(&gold, m, 43).unwrap()
}

fn local_scores(c: &mut Criterion) {
    let d = data(10, 2000);
    let mut group = c.benchmark_group("local_scores_n10_m2000");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| all_local_scores(&d, 1.0, None, exec, BUDGET).unwrap())
        });
    }
    group.finish();
}

fn parent_table(c: &mut Criterion) {
    let table = all_local_scores(&data(12, 500), 1.0, None, Exec::Parallel, BUDGET).unwrap();
    let mut group = c.benchmark_group("parent_table_n12_k10");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ParentTable::build(&table, 10, exec, BUDGET).unwrap())
        });
    }
    group.finish();
}

fn kbest(c: &mut Criterion) {
    let table = all_local_scores(&data(10, 500), 1.0, None, Exec::Parallel, BUDGET).unwrap();
    let parents = ParentTable::build(&table, 50, Exec::Parallel, BUDGET).unwrap();
    let mut group = c.benchmark_group("kbest_networks_n10_k50");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kbest_networks(&parents, 50, exec, BUDGET).unwrap())
        });
    }
    group.finish();
}

fn oracle_evidence(c: &mut Criterion) {
    let table = all_local_scores(&data(5, 500), 1.0, None, Exec::Parallel, BUDGET).unwrap();
    let mut group = c.benchmark_group("oracle_evidence_n5");
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| Oracle::new(&table, exec).unwrap().log_evidence())
        });
    }
    group.finish();
}

criterion_group!(benches, local_scores, parent_table, kbest, oracle_evidence);
criterion_main!(benches);
