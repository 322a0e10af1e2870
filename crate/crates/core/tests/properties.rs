//! Property tests for the invariants of each module. Structured objects are
//! drawn from a ChaCha stream seeded by proptest, so shrinking works on the
//! seed.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mapk_core::catastrophe;
use mapk_core::distributions::{DistributionLaw, ResourceVectorLaw, SubDistribution};
use mapk_core::environment::{build_kernel, stationary_weights, RenewalSolution, SemiMarkovEnvironment};
use mapk_core::grid::TimeGrid;
use mapk_core::linalg::{kron, CMatrix, RMatrix};
use mapk_core::map_core::{counting_pgf, generator_pgf, stationary_vector, superpose, MarkedMap, SingleMap};
use mapk_core::metrics::{self, AnalysisConfig};
use mapk_core::model::{Model, StateModel};
use mapk_core::model_io::{
    self, AnalysisDoc, ComponentDoc, EnvironmentDoc, KernelEntryDoc, LawDoc, MapDoc, ModelDoc, SimulationDoc, StateDoc,
};
use mapk_core::ode::ErrorPolicy;
use mapk_core::simulator::{self, SimConfig};
use mapk_core::transient::{solve_pgf, TransformPoint};

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn amax(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn random_single(rng: &mut ChaCha8Rng, dim: usize) -> SingleMap {
    let d1 = RMatrix::from_fn(dim, dim, |_, _| rng.random_range(0.05..1.5));
    let mut d0 = RMatrix::from_fn(dim, dim, |i, j| if i == j { 0.0 } else { rng.random_range(0.05..1.0) });
    for i in 0..dim {
        let total = d0.row(i).sum() + d1.row(i).sum();
        d0[(i, i)] = -total;
    }
    SingleMap::new(d0, d1).unwrap()
}

fn random_components(rng: &mut ChaCha8Rng, max_order: usize) -> Vec<SingleMap> {
    let k = rng.random_range(1..=3usize);
    let mut order = 1;
    let mut out = Vec::new();
    for _ in 0..k {
        let dim = if order * 2 <= max_order && rng.random_bool(0.5) { 2 } else { 1 };
        order *= dim;
        out.push(random_single(rng, dim));
    }
    out
}

/// A law whose kinks sit on multiples of 0.05.
fn random_law(rng: &mut ChaCha8Rng) -> DistributionLaw {
    match rng.random_range(0..5) {
        0 => DistributionLaw::exponential(rng.random_range(0.3..3.0)).unwrap(),
        1 => DistributionLaw::erlang(rng.random_range(1..=3), rng.random_range(0.5..4.0)).unwrap(),
        2 => DistributionLaw::deterministic(0.05 * rng.random_range(1..=30) as f64).unwrap(),
        3 => {
            let a = 0.05 * rng.random_range(0..=10) as f64;
            DistributionLaw::uniform(a, a + 0.05 * rng.random_range(1..=20) as f64).unwrap()
        }
        _ => {
            let w = rng.random_range(0.1..0.9);
            DistributionLaw::hyperexponential(vec![w, 1.0 - w], vec![rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)])
                .unwrap()
        }
    }
}

fn resource(rng: &mut ChaCha8Rng, k: usize) -> ResourceVectorLaw {
    ResourceVectorLaw::new((0..k).map(|_| random_law(rng)).collect()).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, types: usize, kres: usize, max_order: usize) -> StateModel {
    let mut order = 1;
    let comps: Vec<SingleMap> = (0..types)
        .map(|_| {
            let dim = if order * 2 <= max_order && rng.random_bool(0.3) { 2 } else { 1 };
            order *= dim;
            random_single(rng, dim)
        })
        .collect();
    let map = superpose(&comps).unwrap();
    StateModel::new(
        map,
        (0..types).map(|_| random_law(rng)).collect(),
        (0..types).map(|_| resource(rng, kres)).collect(),
        (0..types).map(|_| resource(rng, kres)).collect(),
    )
    .unwrap()
}

fn random_environment(rng: &mut ChaCha8Rng, d: usize) -> SemiMarkovEnvironment {
    let kernel = (0..d)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter()
                .map(|x| SubDistribution::new(x / total, random_law(rng)).unwrap())
                .collect()
        })
        .collect();
    let repair = (0..d).map(|_| random_law(rng)).collect();
    let mut initial = vec![0.0; d];
    initial[0] = 1.0;
    SemiMarkovEnvironment::new((0..d).map(|i| format!("s{i}")).collect(), kernel, repair, initial).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, types: usize, kres: usize) -> Model {
    let env = random_environment(rng, d);
    let states = (0..d).map(|_| random_state(rng, types, kres, 2)).collect();
    Model::new(env, states).unwrap()
}

fn law_doc(rng: &mut ChaCha8Rng) -> LawDoc {
    LawDoc::from(&random_law(rng))
}

fn matrix_doc(m: &RMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn random_doc(rng: &mut ChaCha8Rng) -> ModelDoc {
    let d = rng.random_range(1..=3usize);
    let types = rng.random_range(1..=2usize);
    let kres = rng.random_range(1..=2usize);
    let env = random_environment(rng, d);
    let environment = EnvironmentDoc {
        states: env.names().to_vec(),
        kernel: env
            .kernel()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| KernelEntryDoc {
                        weight: e.weight,
                        law: LawDoc::from(&e.law),
                    })
                    .collect()
            })
            .collect(),
        repair: env.repair().iter().map(LawDoc::from).collect(),
        initial: env.initial().to_vec(),
    };
    let states = (0..d)
        .map(|_| {
            let comps: Vec<SingleMap> = (0..types)
                .map(|_| {
                    let dim = rng.random_range(1..=2);
                    random_single(rng, dim)
                })
                .collect();
            let map = if rng.random_bool(0.5) {
                MapDoc {
                    components: Some(
                        comps
                            .iter()
                            .map(|s| ComponentDoc {
                                d0: matrix_doc(s.d0()),
                                d1: matrix_doc(s.d1()),
                            })
                            .collect(),
                    ),
                    ..MapDoc::default()
                }
            } else {
                let m = superpose(&comps).unwrap();
                MapDoc {
                    d0: Some(matrix_doc(m.d0())),
                    marks: Some(m.marks().iter().map(matrix_doc).collect()),
                    ..MapDoc::default()
                }
            };
            StateDoc {
                map,
                service: (0..types).map(|_| law_doc(rng)).collect(),
                arrival_resources: (0..types).map(|_| (0..kres).map(|_| law_doc(rng)).collect()).collect(),
                departure_resources: (0..types).map(|_| (0..kres).map(|_| law_doc(rng)).collect()).collect(),
            }
        })
        .collect();
    ModelDoc {
        version: 1,
        environment,
        states,
        analysis: AnalysisDoc {
            grid_step: rng.random_range(0.001..0.1),
            horizon: rng.random_range(3.0..20.0),
            t_points: vec![rng.random_range(0.0..3.0)],
            z_points: vec![rng.random_range(0.0..1.0)],
            cutoff: rng.random_range(1..50),
            tolerance: rng.random_range(1e-9..1e-4),
            enforce_tolerance: rng.random_bool(0.5),
        },
        simulation: SimulationDoc {
            replications: rng.random_range(2..5000),
            seed: rng.random(),
            warmup: rng.random_range(0.0..50.0),
            horizon: rng.random_range(1.0..1e4),
            sample_spacing: rng.random_range(0.1..2.0),
            reference_state: rng.random_range(0..d),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn document_round_trip(seed in any::<u64>()) {
        let doc = random_doc(&mut ChaCha8Rng::seed_from_u64(seed));
        let spec = model_io::from_doc(doc.clone()).unwrap();
        let text = spec.to_json();
        let again = model_io::parse_model(&text).unwrap();
        prop_assert_eq!(&again.doc, &doc);
        prop_assert_eq!(model_io::serialize(&again.doc), text);
    }

    #[test]
    fn generator_spectrum_in_left_half_plane(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = superpose(&random_components(&mut rng, 8)).unwrap();
        let z: Vec<Complex64> = (0..map.types())
            .map(|_| Complex64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let dz = generator_pgf(&map, &z).unwrap();
        let eig = dz.clone().schur().eigenvalues().unwrap();
        for l in eig.iter() {
            prop_assert!(l.re <= 1e-9, "eigenvalue {l}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn counting_pgf_semigroup_and_derivative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = superpose(&random_components(&mut rng, 8)).unwrap();
        let z: Vec<Complex64> = (0..map.types()).map(|_| c(rng.random_range(0.0..1.0))).collect();
        let (s, t) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let whole = counting_pgf(&map, &z, s + t).unwrap();
        let split = counting_pgf(&map, &z, s).unwrap() * counting_pgf(&map, &z, t).unwrap();
        prop_assert!(amax(&(whole - split)) <= 1e-8);

        let h = 1e-5;
        let p = counting_pgf(&map, &z, t).unwrap();
        let fd = (counting_pgf(&map, &z, t + h).unwrap() - &p) / c(h);
        let exact = generator_pgf(&map, &z).unwrap() * &p;
        prop_assert!(amax(&(fd - exact)) <= 1e-3);

        let ones = vec![c(1.0); map.types()];
        let stoch = counting_pgf(&map, &ones, t).unwrap();
        for i in 0..stoch.nrows() {
            let row: Complex64 = stoch.row(i).iter().sum();
            prop_assert!((row - 1.0).norm() <= 1e-8);
        }
    }

    #[test]
    fn poisson_counting_pgf_closed_form(lambda in 0.01f64..5.0, z in 0.0f64..1.0, t in 0.0f64..5.0) {
        let map = superpose(&[SingleMap::poisson(lambda).unwrap()]).unwrap();
        let p = counting_pgf(&map, &[c(z)], t).unwrap()[(0, 0)];
        prop_assert!((p - (lambda * t * (z - 1.0)).exp()).norm() <= 1e-12);
    }

    #[test]
    fn superposed_stationary_vector_is_kronecker(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = random_components(&mut rng, 8);
        let map = superpose(&comps).unwrap();
        let pi = stationary_vector(&map).unwrap().into_vec();
        let mut want = RMatrix::from_element(1, 1, 1.0);
        for comp in &comps {
            let single = MarkedMap::new(comp.d0().clone(), vec![comp.d1().clone()]).unwrap();
            let p = stationary_vector(&single).unwrap().into_vec();
            want = kron(&want, &RMatrix::from_row_slice(1, p.len(), &p));
        }
        for (a, b) in pi.iter().zip(want.iter()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let d = map.generator();
        let residual = RMatrix::from_row_slice(1, pi.len(), &pi) * d;
        prop_assert!(residual.amax() <= 1e-10);
    }

    #[test]
    fn law_transform_matches_density(seed in any::<u64>()) {
        let law = random_law(&mut ChaCha8Rng::seed_from_u64(seed));
        for s in [0.5, 1.0, 2.0] {
            // Midpoint rule on the density plus the atoms.
            let h = 1e-3;
            let end = law.tail_point(1e-12);
            let mut v: f64 = (0..(end / h).ceil() as usize)
                .map(|n| {
                    let t = (n as f64 + 0.5) * h;
                    (-s * t).exp() * law.pdf(t) * h
                })
                .sum();
            if let Some((x, m)) = law.atom() {
                v += m * (-s * x).exp();
            }
            let lst = law.lst(c(s)).unwrap();
            prop_assert!((lst.re - v).abs() <= 1e-4, "{law:?} s={s}: {lst} vs {v}");
        }
        let long = 40.0 * law.mean();
        prop_assert!((law.integrated_survival(long) - law.mean()).abs() <= 1e-6);
        let mut prev = 0.0;
        for n in 0..200 {
            let f = law.cdf(n as f64 * 0.05);
            prop_assert!((0.0..=1.0).contains(&f) && f >= prev);
            prev = f;
        }
    }

    #[test]
    fn resource_transform_factorizes(seed in any::<u64>(), s1 in 0.0f64..3.0, s2 in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = resource(&mut rng, 2);
        let joint = law.lst(&[c(s1), c(s2)]).unwrap();
        let product = law.marginals()[0].lst(c(s1)).unwrap() * law.marginals()[1].lst(c(s2)).unwrap();
        prop_assert!((joint - product).norm() <= 1e-14);
    }

    #[test]
    fn kernel_rows_are_substochastic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..=3);
        let env = random_environment(&mut rng, d);
        let grid = TimeGrid::new(0.05, 10.0).unwrap();
        let q = build_kernel(&env, &grid).unwrap();
        for row in &q {
            for n in 0..grid.len() {
                let total: f64 = row.iter().map(|qij| qij[n]).sum();
                prop_assert!(total <= 1.0 + 1e-12);
            }
        }
        for (i, row) in env.kernel().iter().enumerate() {
            for e in row {
                for n in 0..50 {
                    let t = n as f64 * 0.2;
                    prop_assert!(e.cdf(t) <= e.weight + 1e-15, "row {i}");
                }
            }
        }
        let (_, weights) = stationary_weights(&env.embedded_chain(), &env.cycle_means()).unwrap();
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(weights.iter().all(|w| *w >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transient_transform_is_stochastic_at_normalization(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let types = rng.random_range(1..=2);
        let state = random_state(&mut rng, types, 1, 4);
        let grid = TimeGrid::new(0.01, 3.0).unwrap();
        let sol = solve_pgf(&state, &TransformPoint::normalization(types, 1), &grid, ErrorPolicy::default()).unwrap();
        for a in &sol.a {
            for i in 0..a.nrows() {
                let row: Complex64 = a.row(i).iter().sum();
                prop_assert!((row - 1.0).norm() <= 1e-8);
            }
        }
        let z = TransformPoint::queue_real(rng.random_range(0.0..1.0), types, 1);
        let sol = solve_pgf(&state, &z, &grid, ErrorPolicy::default()).unwrap();
        for (_, dev) in &sol.integral_check {
            prop_assert!(*dev <= 1e-6);
        }
    }

    #[test]
    fn poisson_joint_transform_closed_form(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambdas = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
        let comps: Vec<SingleMap> = lambdas.iter().map(|l| SingleMap::poisson(*l).unwrap()).collect();
        let service: Vec<DistributionLaw> = (0..2).map(|_| random_law(&mut rng)).collect();
        let arrive: Vec<ResourceVectorLaw> = (0..2).map(|_| resource(&mut rng, 1)).collect();
        let depart: Vec<ResourceVectorLaw> = (0..2).map(|_| resource(&mut rng, 1)).collect();
        let state = StateModel::new(superpose(&comps).unwrap(), service.clone(), arrive.clone(), depart.clone()).unwrap();
        let point = TransformPoint {
            z1: vec![c(rng.random_range(0.0..1.0)), c(rng.random_range(0.0..1.0))],
            z2: vec![c(rng.random_range(0.0..1.0)), c(rng.random_range(0.0..1.0))],
            s1: vec![c(rng.random_range(0.0..2.0))],
            s2: vec![c(rng.random_range(0.0..2.0))],
        };
        let grid = TimeGrid::new(0.01, 2.0).unwrap();
        let sol = solve_pgf(&state, &point, &grid, ErrorPolicy::default()).unwrap();
        let n = grid.len() - 1;
        let t = grid.point(n);
        let mut exponent = c(0.0);
        for r in 0..2 {
            let g = depart[r].lst(&point.s2).unwrap();
            let cc = arrive[r].lst(&point.s1).unwrap();
            let served = t - service[r].integrated_survival(t);
            let present = service[r].integrated_survival(t);
            exponent -= (served * (c(1.0) - point.z2[r] * g) + present * (c(1.0) - point.z1[r] * cc)) * lambdas[r];
        }
        prop_assert!((sol.a[n][(0, 0)] - exponent.exp()).norm() <= 1e-8);
    }

    #[test]
    fn more_load_means_fewer_empty_systems(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_model(&mut rng, 2, 1, 1);
        let grid = TimeGrid::new(0.05, 3.0).unwrap();
        let renewal = RenewalSolution::compute(base.environment(), &grid).unwrap();
        let z = rng.random_range(0.0..0.9);
        let point = TransformPoint::queue_real(z, 1, 1);
        let mut prev: Option<Vec<Complex64>> = None;
        for factor in [0.5, 1.0, 2.0] {
            let model = base.scale_arrivals(factor).unwrap();
            let (_, _, per_state, _) =
                catastrophe::transient_with_catastrophes(&model, &renewal, &grid, &point, ErrorPolicy::lenient()).unwrap();
            let values: Vec<Complex64> = per_state[0].clone();
            if let Some(p) = &prev {
                for (a, b) in values.iter().zip(p) {
                    prop_assert!(a.re <= b.re + 1e-9);
                }
            }
            prev = Some(values);
        }
    }

    #[test]
    fn two_l_q_paths_agree_and_losses_are_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, 2, 1);
        let cfg = AnalysisConfig {
            grid_step: 0.05,
            horizon: 2.0,
            t_points: vec![1.0],
            z_points: vec![0.5],
            ..AnalysisConfig::default()
        };
        let report = metrics::analyze(&model, &cfg).unwrap();
        prop_assert!(report.diagnostics.l_q_path_gap <= 1e-8);
        let env = model.environment();
        let eta = env.cycle_means();
        let (_, q) = stationary_weights(&env.embedded_chain(), &eta).unwrap();
        for tm in &report.per_type {
            // Destroyed per unit time cannot exceed the arrival rate.
            let bound: f64 = (0..env.states())
                .map(|j| q[j] * model.state(j).rates()[tm.customer_type])
                .sum();
            prop_assert!(tm.l_los <= bound + 1e-9);
            prop_assert!(tm.variance.limit >= -1e-9);
        }
    }

    #[test]
    fn simulation_conserves_customers_and_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, 2, 2, 1);
        let cfg = SimConfig {
            replications: 8,
            seed,
            warmup: 1.0,
            horizon: 40.0,
            t_points: vec![1.0, 3.0],
            trace: true,
            ..SimConfig::default()
        };
        let a = simulator::simulate_transient(&model, &cfg).unwrap();
        let b = simulator::simulate_transient(&model, &cfg).unwrap();
        prop_assert_eq!(&a.trace_hash, &b.trace_hash);
        prop_assert!(a.conservation_checks > 0);
        prop_assert!(a.trace.windows(2).all(|w| w[0].time <= w[1].time));
        for r in 0..2 {
            for t in [1, 3] {
                let arrivals = a.get(&format!("arrivals.type{r}@t={t}")).unwrap().mean;
                let served = a.get(&format!("served.type{r}@t={t}")).unwrap().mean;
                let destroyed = a.get(&format!("destroyed.type{r}@t={t}")).unwrap().mean;
                let present = a.get(&format!("queue_mean.type{r}@t={t}")).unwrap().mean;
                prop_assert!((arrivals - served - destroyed - present).abs() <= 1e-9);
            }
        }
    }
}
