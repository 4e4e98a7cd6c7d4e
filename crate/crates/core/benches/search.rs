use criterion::{criterion_group, criterion_main, Criterion};
use oat_core::directive::{parse_source, SearchMethod};
use oat_core::kernel::{interpret, parse_kernel, ExecEnv, Ident, KernelProgram, Value};
use oat_core::search::{build_space, composed_search, Evaluator, SearchSpace};
use oat_core::transform::Assignment;
use std::collections::BTreeMap;
use std::hint::black_box;

const KERNEL: &str = "do i = 1, n
  do j = 1, m
    A(i, j) = A(i, j) * 0.5 + B(i, j) * C(j, i)
    s = s + A(i, j)
  enddo
enddo
";

/// Sample 10 with every domain cut to 1..4, all exhaustive: 4 * 16 * 16 points.
fn spaces() -> Vec<SearchSpace> {
    let tree = parse_source(include_str!("../tests/fixtures/sample10.f")).unwrap();
    let outer = &tree.regions[0];
    let mut out = vec![build_space(outer).unwrap()];
    out.extend(outer.children.iter().map(|c| build_space(c).unwrap()));
    for s in &mut out {
        s.method = SearchMethod::Exhaustive;
        for d in &mut s.dims {
            d.domain.retain(|v| v.as_int().is_some_and(|x| x <= 4));
        }
    }
    out
}

/// Interprets a small kernel sized by the point being costed.
struct Interpreted {
    prog: KernelProgram,
}

impl Evaluator for Interpreted {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String> {
        let ints: Vec<i64> = a.values().filter_map(|v| v.as_int()).collect();
        let n = 4 + ints.iter().take(3).sum::<i64>();
        let m = 4 + ints.iter().skip(3).sum::<i64>();
        let b: BTreeMap<Ident, Value> =
            [(Ident::new("n"), Value::Int(n)), (Ident::new("m"), Value::Int(m)), (Ident::new("s"), Value::Real(0.0))]
                .into();
        let env = ExecEnv::seeded(&self.prog, &b, 1).map_err(|e| e.to_string())?;
        let out = interpret(&self.prog, env).map_err(|e| e.to_string())?;
        Ok(out.scalars[&Ident::new("s")].as_f64())
    }

    fn concurrent(&self) -> bool {
        true
    }
}

struct Sequential<'a>(&'a Interpreted);

impl Evaluator for Sequential<'_> {
    fn evaluate(&self, a: &Assignment) -> Result<f64, String> {
        self.0.evaluate(a)
    }
}

fn bench(c: &mut Criterion) {
    let plan = spaces();
    let eval = Interpreted { prog: parse_kernel(KERNEL).unwrap() };
    let mut g = c.benchmark_group("composed_exhaustive_1024");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(composed_search(&plan, &eval).unwrap().best_cost)));
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(composed_search(&plan, &Sequential(&eval)).unwrap().best_cost))
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
