mod common;

use causal_ceo::finite_bt::*;
use common::{random_ceo_toy, random_region_toy, random_triple, ToySpec};
use rand::Rng;

fn procs(p: &FinitePmf, t: usize) -> (Process, Process, Process) {
    let s = |n: &str| Process::select(p, n, &[0], t).unwrap();
    (s("A"), s("B"), s("C"))
}

#[test]
fn chain_rules_on_random_pmfs() {
    let mut r = common::rng(1);
    for n in 0..60 {
        let t = 1 + n % 3;
        let p = random_triple(&mut r, t);
        let (x, y, z) = procs(&p, t);
        let xy = x.concat(&y).unwrap();
        let lhs = directed_information(&p, &xy, &z).unwrap();
        let rhs = directed_information(&p, &x, &z).unwrap() + causally_conditioned_di(&p, &y, &z, &x).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "chain1: {lhs} vs {rhs}");
        let yz = y.concat(&z).unwrap();
        let lhs = directed_information(&p, &x, &yz).unwrap();
        let rhs = causally_conditioned_di(&p, &x, &y, &z.delayed()).unwrap()
            + causally_conditioned_di(&p, &x, &z, &y).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "chain2: {lhs} vs {rhs}");
    }
}

#[test]
fn di_bounds_and_degenerate_cases() {
    let mut r = common::rng(2);
    for t in 1..=3 {
        let p = random_triple(&mut r, t);
        let (x, y, z) = procs(&p, t);
        let di = directed_information(&p, &x, &y).unwrap();
        let cap: f64 = (0..t).map(|i| (p.axes()[y.step(i)[0]].size as f64).ln()).sum();
        assert!(di >= 0.0 && di <= cap + 1e-12);
        if t == 1 {
            let mi = p.mutual_information(x.step(0), y.step(0), &[]);
            assert!((di - mi).abs() < 1e-14);
        }
        let _ = z;
    }
    // independent processes
    let a = common::random_pmf(&mut r, vec![Axis::new("A", 1, 0, 3), Axis::new("A", 2, 0, 2)]);
    let b = common::random_pmf(&mut r, vec![Axis::new("B", 1, 0, 2), Axis::new("B", 2, 0, 3)]);
    let c = common::random_pmf(&mut r, vec![Axis::new("C", 1, 0, 2), Axis::new("C", 2, 0, 2)]);
    let p = a.independent(&b).unwrap();
    let (x, y) = (Process::select(&p, "A", &[0], 2).unwrap(), Process::select(&p, "B", &[0], 2).unwrap());
    assert!(directed_information(&p, &x, &y).unwrap().abs() < 1e-14);
    // an independent conditioning process changes nothing
    let p = random_triple(&mut r, 2).independent(&c.clone()).ok();
    assert!(p.is_none(), "axis names clash and must be rejected");
    let base = random_triple(&mut r, 2);
    let renamed: Vec<Axis> = c.axes().iter().map(|a| Axis::new("D", a.label.time, 0, a.size)).collect();
    let p = base.independent(&FinitePmf::new(renamed, c.probs().to_vec()).unwrap()).unwrap();
    let (x, y, _) = procs(&p, 2);
    let d = Process::select(&p, "D", &[0], 2).unwrap();
    let plain = directed_information(&p, &x, &y).unwrap();
    let cond = causally_conditioned_di(&p, &x, &y, &d).unwrap();
    assert!((plain - cond).abs() < 1e-12);
}

fn toy(r: &mut rand_chacha::ChaCha8Rng, t: usize, k: usize) -> FinitePmf {
    random_ceo_toy(r, &ToySpec { t, k, x: 2, y: 2, u: 2, with_decoder: true })
}

#[test]
fn permutation_sum_identity() {
    let mut r = common::rng(3);
    for n in 0..30 {
        let (t, k) = [(1, 2), (2, 2), (1, 3), (2, 1), (3, 1)][n % 5];
        let p = toy(&mut r, t, k);
        let perms: Vec<Vec<usize>> = if k == 3 {
            vec![vec![0, 1, 2], vec![2, 0, 1], vec![1, 2, 0]]
        } else if k == 2 {
            vec![vec![0, 1], vec![1, 0]]
        } else {
            vec![vec![0]]
        };
        for pi in perms {
            let rates = achievable_rates(&p, &pi).unwrap();
            assert!((rates.sum - rates.total_di).abs() < 1e-10, "{rates:?}");
            assert!(rates.per_observer.iter().all(|v| *v >= -1e-15));
        }
    }
}

#[test]
fn densities_reproduce_information_terms() {
    let mut r = common::rng(4);
    for _ in 0..10 {
        let p = toy(&mut r, 2, 2);
        let layout = BtLayout::detect(&p).unwrap();
        let pi = vec![1, 0];
        let dens = info_density_tables(&p, &pi).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                // E[ı] = I(Y_[i]; U_i | U_[i−1])
                let e = dens.iota_at(i + 1, k + 1).unwrap().expectation(&p);
                let mi = p.mutual_information(&layout.y[k][..=i], &[layout.u[k][i]], &layout.u[k][..i]);
                assert!((e - mi).abs() < 1e-12);
            }
            // E[ı] − E[ȷ] is the conditional term of the rate
            for (pos, &j) in pi.iter().enumerate() {
                let d = dens.jota_at(i + 1, j + 1).unwrap().expectation(&p);
                let iota = dens.iota_at(i + 1, j + 1).unwrap().expectation(&p);
                let mut cond: Vec<usize> = pi[..pos].iter().map(|&o| layout.u[o][i]).collect();
                for o in 0..2 {
                    cond.extend_from_slice(&layout.u[o][..i]);
                }
                let mi = p.mutual_information(&layout.y[j][..=i], &[layout.u[j][i]], &cond);
                assert!((iota - d - mi).abs() < 1e-12, "{iota} - {d} vs {mi}");
            }
        }
        // zero-probability outcomes carry zero density
        for t in dens.iota.iter().chain(&dens.jota) {
            for (v, q) in t.values.iter().zip(p.probs()) {
                assert!(*q > 0.0 || *v == 0.0);
                assert!(v.is_finite());
            }
        }
    }
}

#[test]
fn markov_structure_of_separate_encoders() {
    let mut r = common::rng(5);
    for _ in 0..10 {
        let p = toy(&mut r, 2, 2);
        check_separate_encoding(&p).unwrap();
    }
}

#[test]
fn independent_encoders_have_zero_rate() {
    let mut r = common::rng(6);
    let y = common::random_pmf(&mut r, vec![Axis::new("Y", 1, 1, 3), Axis::new("Y", 1, 2, 2)]);
    let u = common::random_pmf(&mut r, vec![Axis::new("U", 1, 1, 2), Axis::new("U", 1, 2, 2)]);
    // U^1 and U^2 are independent of each other too, so this is a separate encoding
    let u1 = FinitePmf::new(vec![u.axes()[0].clone()], vec![0.3, 0.7]).unwrap();
    let u2 = FinitePmf::new(vec![u.axes()[1].clone()], vec![0.6, 0.4]).unwrap();
    let p = y.independent(&u1).unwrap().independent(&u2).unwrap();
    for pi in [[0, 1], [1, 0]] {
        let rates = achievable_rates(&p, &pi).unwrap();
        assert!(rates.per_observer.iter().all(|v| v.abs() < 1e-14));
    }
    let sizes = select_code_sizes(&p, &[0, 1], 0.01, 1).unwrap();
    assert_eq!(sizes.l, sizes.m);
}

#[test]
fn two_orders_split_differently() {
    // Y^1 = Y^2 with probability 0.9, each U^k a 0.9-reliable copy of Y^k
    let axes = vec![Axis::new("Y", 1, 1, 2), Axis::new("Y", 1, 2, 2), Axis::new("U", 1, 1, 2), Axis::new("U", 1, 2, 2)];
    let f = |a: usize, b: usize| if a == b { 0.9 } else { 0.1 };
    let p = FinitePmf::from_fn(axes, |d| f(d[0], d[1]) * f(d[0], d[2]) * f(d[1], d[3])).unwrap();
    let a = achievable_rates(&p, &[0, 1]).unwrap();
    let b = achievable_rates(&p, &[1, 0]).unwrap();
    // the first decoded observer pays I(Y;U), the second only I(Y;U | other U)
    let gap = p.mutual_information(&[2], &[3], &[]);
    assert!(gap > 0.1);
    assert!((a.per_observer[0] - b.per_observer[0] - gap).abs() < 1e-12, "{a:?} {b:?}");
    assert!((a.sum - b.sum).abs() < 1e-12);
}

#[test]
fn code_sizes_scale_with_block_length() {
    let mut r = common::rng(8);
    let p = toy(&mut r, 1, 2);
    let one = select_code_sizes(&p, &[0, 1], 0.05, 1).unwrap();
    let two = select_code_sizes(&p, &[0, 1], 0.05, 2).unwrap();
    for (a, b) in one.log_l_target.iter().flatten().zip(two.log_l_target.iter().flatten()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
    for (i, row) in one.l.iter().enumerate() {
        for (k, l) in row.iter().enumerate() {
            assert!((*l as f64).ln() >= one.log_l_target[i][k] - 1e-9);
            assert!(one.m[i][k] <= *l && one.m[i][k] >= 1);
        }
    }
    assert_eq!(two.alpha, 0.1);
}

fn random_params(r: &mut rand_chacha::ChaCha8Rng, t: usize, k: usize) -> CodeParams {
    let l: Vec<Vec<u64>> = (0..t).map(|_| (0..k).map(|_| r.random_range(1..6)).collect()).collect();
    let m: Vec<Vec<u64>> = l.iter().map(|row| row.iter().map(|l| r.random_range(1..=*l)).collect()).collect();
    let mut p = CodeParams::uniform(t, k, 1, 1, 0.0, 0.0, (0..t).map(|_| r.random_range(0.0..1.0)).collect(), common::hamming(2));
    p.set_sizes(&l, &m).unwrap();
    for i in 0..t {
        for j in 0..k {
            p.alpha[i][j] = r.random_range(-1.0..4.0);
            p.beta[i][j] = r.random_range(-2.0..4.0);
        }
    }
    if k == 2 && r.random::<bool>() {
        p.pi = vec![1, 0];
    }
    p
}

#[test]
fn sharp_bound_dominates_weak_bound() {
    let mut r = common::rng(9);
    for n in 0..40 {
        let (t, k) = [(1, 1), (1, 2), (2, 1), (2, 2)][n % 4];
        let pmf = toy(&mut r, t, k);
        let p = random_params(&mut r, t, k);
        let (b, sharp) = evaluate_bt_both(&pmf, &p).unwrap();
        assert!(sharp + 1e-12 >= 1.0 - b.epsilon_bound, "sharp {sharp} weak {}", 1.0 - b.epsilon_bound);
        assert!(b.prob_e <= b.prob_distortion + b.prob_iota + b.prob_jota + 1e-12);
        assert!(b.prob_e + 1e-15 >= b.prob_distortion.max(b.prob_iota).max(b.prob_jota));
    }
}

#[test]
fn block_length_two_enumerates_pairs() {
    let mut r = common::rng(10);
    let pmf = toy(&mut r, 1, 1);
    let mut p = random_params(&mut r, 1, 1);
    p.n = 2;
    let (b, sharp) = evaluate_bt_both(&pmf, &p).unwrap();
    assert!(sharp + 1e-12 >= 1.0 - b.epsilon_bound);
    // the distortion event for n = 2 from pair sums computed here
    let layout = BtLayout::detect(&pmf).unwrap();
    let (x, xh) = (layout.x.unwrap()[0], layout.xhat.unwrap()[0]);
    let mut digits = vec![0; pmf.axes().len()];
    let mut letters = Vec::new();
    for (idx, q) in pmf.probs().iter().enumerate() {
        if *q > 0.0 {
            pmf.digits(idx, &mut digits);
            letters.push((*q, p.distortion[digits[x]][digits[xh]]));
        }
    }
    let mut expect = 0.0;
    for (qa, da) in &letters {
        for (qb, db) in &letters {
            if 0.5 * (da + db) > p.d[0] {
                expect += qa * qb;
            }
        }
    }
    assert!((b.prob_distortion - expect).abs() < 1e-12);
}

#[test]
fn enumeration_cap_is_enforced() {
    let mut r = common::rng(12);
    let pmf = toy(&mut r, 2, 2);
    let mut p = random_params(&mut r, 2, 2);
    p.n = 8;
    assert!(matches!(evaluate_bt_bound(&pmf, &p), Err(causal_ceo::Error::TooLarge { .. })));
}

#[test]
fn monte_carlo_matches_exact() {
    let mut r = common::rng(13);
    let pmf = toy(&mut r, 1, 2);
    let mut p = random_params(&mut r, 1, 2);
    p.d = vec![0.5];
    let exact = evaluate_bt_bound(&pmf, &p).unwrap().prob_e;
    let mc = estimate_event_probability(&pmf, &p, 200_000, 99).unwrap();
    assert!((mc.estimate - exact).abs() <= 4.0 * mc.std_error.max(1e-12), "{mc:?} vs {exact}");
}

#[test]
fn region_characterizations_agree() {
    let mut r = common::rng(14);
    for k in [1, 2, 3] {
        let p = random_region_toy(&mut r, k);
        let rep = region_equivalence(&p, 300, 21).unwrap();
        assert_eq!(rep.agree, rep.compared, "{rep:?}");
        assert!(rep.compared > 250);
        assert!(rep.vertex_in_both);
        assert!(rep.inside > 0 && rep.inside < rep.compared);
        if k == 1 {
            assert_eq!(rep.disagree_union, 0);
            assert_eq!(rep.disagree_all_orders, 0);
        }
    }
}

#[test]
fn bound_on_assembled_kernels() {
    // lossless copy through one observer, identity decoder
    let x = FinitePmf::new(vec![Axis::new("X", 1, 0, 2)], vec![0.5, 0.5]).unwrap();
    let y = Factor::deterministic(Axis::new("Y", 1, 1, 2), vec![AxisRef::new("X", 1, 0)], &[2], |d| d[0]).unwrap();
    let enc = CausalKernel::new(
        KernelRole::Encoder(1),
        vec![Factor::deterministic(Axis::new("U", 1, 1, 2), vec![AxisRef::new("Y", 1, 1)], &[2], |d| d[0]).unwrap()],
    )
    .unwrap();
    let dec = CausalKernel::new(
        KernelRole::Decoder,
        vec![Factor::deterministic(Axis::new("Xhat", 1, 0, 2), vec![AxisRef::new("U", 1, 1)], &[2], |d| d[0]).unwrap()],
    )
    .unwrap();
    let pmf = assemble(&x.extend(&y).unwrap(), &[enc, dec]).unwrap();
    let sizes = select_code_sizes(&pmf, &[0], 1e-15, 1).unwrap();
    assert_eq!(sizes.l, vec![vec![2]]);
    let p = sizes.params(vec![0.0], common::hamming(2)).unwrap();
    let b = evaluate_bt_bound(&pmf, &p).unwrap();
    assert_eq!(b.prob_distortion, 0.0);
}
