mod common;

use common::{dense_solve, kundur, rand_c, rng};
use rand::Rng;
use rmsim::engine::{run_batch, ChannelSelection, Event, SimulationConfig};
use rmsim::model_io::read_model;
use rmsim::network::{branch_stamp, build_ybus, kron_reduce, solve_power_flow, AdmittanceMatrix, PowerFlowOptions};
use rmsim::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn dense_rows(y: &AdmittanceMatrix) -> Vec<Vec<Complex64>> {
    let n = y.dim();
    (0..n).map(|i| (0..n).map(|j| y.get(i, j)).collect()).collect()
}

#[test]
fn kundur_dynamic_matrix_is_diagonally_dominant() {
    let k = kundur();
    let y = build_ybus(&k.sys, Some(&k.pf), true).unwrap();
    let shunted: Vec<usize> = k
        .sys
        .loads
        .iter()
        .map(|l| &l.bus)
        .chain(k.sys.generators.iter().map(|g| &g.bus))
        .map(|b| k.sys.bus_index(b).unwrap())
        .collect();
    for &i in &shunted {
        let off: f64 = (0..y.dim()).filter(|&j| j != i).map(|j| y.get(i, j).norm()).sum();
        assert!(y.get(i, i).norm() >= off, "row {i}: {} < {off}", y.get(i, i).norm());
    }
}

#[test]
fn kundur_power_flow_balances() {
    let k = kundur();
    assert!(k.pf.iterations <= 6, "{} iterations", k.pf.iterations);
    let load: f64 = k.sys.loads.iter().map(|l| l.p).sum();
    let gen: f64 = k.pf.s.iter().map(|s| s.re).sum::<f64>() + load;
    // Losses summed branch by branch from the solved voltages.
    let v = &k.pf.v;
    let mut losses = 0.0;
    for br in &k.sys.branches {
        let [(f, _, yff), (t, _, ytt), (_, _, yft), (_, _, ytf)] = branch_stamp(&k.sys, br).unwrap();
        let i_f = yff * v[f] + yft * v[t];
        let i_t = ytf * v[f] + ytt * v[t];
        losses += (v[f] * i_f.conj() + v[t] * i_t.conj()).re;
    }
    assert!(losses > 0.0);
    assert!((gen - load - losses).abs() < 1e-7, "gen {gen} load {load} losses {losses}");
}

#[test]
fn power_flow_reproduces_specified_injections() {
    for path in [rmsim::fixtures::kundur_two_area(), rmsim::fixtures::ieee39()] {
        let sys = read_model(&path).unwrap();
        let pf = solve_power_flow(&sys, &PowerFlowOptions::default()).unwrap();
        let y = build_ybus(&sys, None, false).unwrap();
        let i = y.multiply(&pf.v);
        for (b, bus) in sys.buses.iter().enumerate() {
            let s = pf.v[b] * i[b].conj();
            let p_load: f64 = sys.loads.iter().filter(|l| l.bus == bus.name).map(|l| l.p).sum();
            let q_load: f64 = sys.loads.iter().filter(|l| l.bus == bus.name).map(|l| l.q).sum();
            let p_gen: f64 = sys.generators.iter().filter(|g| g.bus == bus.name).map(|g| g.p_set).sum();
            match bus.kind {
                rmsim::model_io::BusKind::PQ => {
                    assert!((s.re + p_load).abs() < 1e-8, "{}", bus.name);
                    assert!((s.im + q_load).abs() < 1e-8, "{}", bus.name);
                }
                rmsim::model_io::BusKind::PV => assert!((s.re - p_gen + p_load).abs() < 1e-8, "{}", bus.name),
                rmsim::model_io::BusKind::Slack => {}
            }
        }
    }
}

#[test]
fn random_sparse_solve_matches_dense_oracle() {
    let mut r = rng(7);
    let n = 20;
    let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let mut y = AdmittanceMatrix::new(names);
    let add_branch = |y: &mut AdmittanceMatrix, a: usize, b: usize, yb: Complex64| {
        y.stamp(a, a, yb).unwrap();
        y.stamp(b, b, yb).unwrap();
        y.stamp(a, b, -yb).unwrap();
        y.stamp(b, a, -yb).unwrap();
    };
    for i in 0..n {
        let yb = c(r.random_range(0.5..2.0), -r.random_range(5.0..20.0));
        add_branch(&mut y, i, (i + 1) % n, yb);
    }
    for _ in 0..10 {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a != b {
            add_branch(&mut y, a, b, c(r.random_range(0.1..1.0), -r.random_range(1.0..10.0)));
        }
    }
    for i in 0..n {
        y.stamp(i, i, c(r.random_range(0.5..1.5), -r.random_range(0.0..0.5))).unwrap();
    }
    let inj: Vec<Complex64> = (0..n).map(|_| rand_c(&mut r, 2.0)).collect();
    let oracle = dense_solve(&dense_rows(&y), &inj);
    let v = y.solve(&inj).unwrap();
    let d = v.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(d < 1e-10, "{d:e}");
    let res = y.multiply(&v).iter().zip(&inj).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(res < 1e-10, "{res:e}");
}

fn kundur_keep(k: &common::Case, extra: &[&str]) -> Vec<usize> {
    let mut keep: Vec<usize> = k.sys.generators.iter().map(|g| k.sys.bus_index(&g.bus).unwrap()).collect();
    keep.extend(extra.iter().map(|b| k.sys.bus_index(b).unwrap()));
    keep.sort_unstable();
    keep
}

#[test]
fn kron_equivalence_on_random_injections() {
    let k = kundur();
    let y = build_ybus(&k.sys, Some(&k.pf), true).unwrap();
    let keep = kundur_keep(&k, &["B7", "B8"]);
    let (mut red, map) = kron_reduce(&y, &keep).unwrap();
    assert_eq!(map.retained.len() + map.eliminated.len(), y.dim());
    let full = dense_rows(&y);
    let mut r = rng(11);
    for _ in 0..100 {
        let ik: Vec<Complex64> = (0..keep.len()).map(|_| rand_c(&mut r, 10.0)).collect();
        let mut i_full = vec![c(0.0, 0.0); y.dim()];
        for (p, &b) in keep.iter().enumerate() {
            i_full[b] = ik[p];
        }
        let v_ref = dense_solve(&full, &i_full);
        let v_red = red.solve(&ik).unwrap();
        for (p, &b) in keep.iter().enumerate() {
            assert!((v_red[p] - v_ref[b]).norm() < 1e-10);
        }
        // recovered voltages satisfy the eliminated rows
        let v_all = map.full_voltages(&v_red);
        for &e in &map.eliminated_index {
            let row: Complex64 = (0..y.dim()).map(|j| full[e][j] * v_all[j]).sum();
            assert!(row.norm() < 1e-10, "{e}: {row}");
        }
    }
}

#[test]
fn repeated_solves_reuse_the_factorization_exactly() {
    let k = kundur();
    let y = build_ybus(&k.sys, Some(&k.pf), true).unwrap();
    let (mut red, _) = kron_reduce(&y, &kundur_keep(&k, &[])).unwrap();
    let mut r = rng(3);
    let inj: Vec<Complex64> = (0..red.dim()).map(|_| rand_c(&mut r, 5.0)).collect();
    let mut fresh = red.clone();
    fresh.factorize().unwrap();
    let want = fresh.solve(&inj).unwrap();
    red.factorize().unwrap();
    for _ in 0..1000 {
        assert_eq!(red.solve(&inj).unwrap(), want);
    }
    assert!(!red.is_dirty());
}

#[test]
fn bolted_fault_pulls_bus_voltage_to_zero() {
    let k = kundur();
    let mut r = rng(5);
    for bus in ["B1", "B5", "B8"] {
        let mut y = build_ybus(&k.sys, Some(&k.pf), true).unwrap();
        let i = y.bus_index(bus).unwrap();
        y.modify(&[(i, i, c(1e5, 0.0))]).unwrap();
        assert!(y.is_dirty());
        for _ in 0..20 {
            let mut inj = vec![c(0.0, 0.0); y.dim()];
            for g in &k.sys.generators {
                inj[k.sys.bus_index(&g.bus).unwrap()] = rand_c(&mut r, 50.0);
            }
            let v = y.solve(&inj).unwrap();
            assert!(v[i].norm() < 1e-3, "{bus}: {}", v[i].norm());
        }
    }
}

#[test]
fn reduced_and_full_networks_give_the_same_generator_voltages() {
    let sys = read_model(rmsim::fixtures::kundur_two_area()).unwrap();
    let run = |keep: Vec<String>| {
        let cfg = SimulationConfig { keep_buses: keep, t_end: 3.0, ..Default::default() };
        let k = common::load(rmsim::fixtures::kundur_two_area(), &cfg);
        let ev = [Event::fault_on(0.5, "B8"), Event::fault_off(0.6, "B8"), Event::line_trip(0.6, "L7-8")];
        run_batch(k.ode, &k.x0, &cfg, &ev, &ChannelSelection::all()).unwrap().trajectory
    };
    let full = run(sys.buses.iter().map(|b| b.name.clone()).collect());
    let red = run(vec!["B7".into(), "B8".into()]);
    assert_eq!(full.len(), red.len());
    for g in &sys.generators {
        for q in ["V_mag", "V_ang"] {
            let name = format!("{}.{q}", g.bus);
            let d = common::max_abs_diff(&full.column(&name).unwrap(), &red.column(&name).unwrap());
            assert!(d < 1e-10, "{name}: {d:e}");
        }
    }
}
