//! Shapley attribution: permutation-sampling estimator, exact enumeration and the
//! efficiency-error sample-size check.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt;

/// Largest player count `exact_shapley` will enumerate.
pub const EXACT_MAX_DIM: usize = 10;
pub const K_START: usize = 100;
pub const K_CAP: usize = 1_000_000;

/// A cooperative game: a value function of a full parameter vector, the explicand
/// whose features are the players, and a background sample filling absent features.
pub struct ShapleyGame<F> {
    pub value_fn: F,
    pub explicand: Vec<f64>,
    pub background: Vec<Vec<f64>>,
}

impl<F: Fn(&[f64]) -> f64> ShapleyGame<F> {
    pub fn new(value_fn: F, explicand: Vec<f64>, background: Vec<Vec<f64>>) -> Result<Self> {
        check_setting(&explicand, &background)?;
        Ok(ShapleyGame {
            value_fn,
            explicand,
            background,
        })
    }

    pub fn dim(&self) -> usize {
        self.explicand.len()
    }

    fn scalar(&self) -> impl Fn(&[f64], &mut [f64]) + '_ {
        move |t, out| out[0] = (self.value_fn)(t)
    }
}

fn check_setting(explicand: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if explicand.is_empty() {
        return Err(Error::Empty("explicand"));
    }
    if background.is_empty() {
        return Err(Error::Empty("background"));
    }
    for z in background {
        if z.len() != explicand.len() {
            return Err(Error::DimensionMismatch {
                expected: explicand.len(),
                got: z.len(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionEstimate {
    pub phi: Vec<f64>,
    pub stderr: Vec<f64>,
    pub k: usize,
    /// `None` for exact enumeration.
    pub seed: Option<u64>,
    pub background_size: usize,
}

impl AttributionEstimate {
    pub fn sum(&self) -> f64 {
        self.phi.iter().sum()
    }

    pub fn scaled(&self, w: f64) -> Vec<f64> {
        self.phi.iter().map(|p| w * p).collect()
    }
}

/// Running mean and sum of squared deviations per (output, feature).
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(xs) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    fn stderr(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.m2.len()];
        }
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| (s / (n - 1.0)).sqrt() / n.sqrt())
            .collect()
    }
}

/// The rng for draw `k`: independent of how draws are scheduled.
fn draw_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Permutation-sampling estimator for a vector-valued game, one estimate per output.
///
/// Each draw picks a background instance `z` and an order `pi`, then walks `pi`
/// switching features from `z` to the explicand; the difference at each switch is the
/// marginal contribution of that feature. Draws are shared by every feature and every
/// output, so attributions of a linear combination of outputs are exactly that
/// combination of attributions.
pub fn estimate_shapley_multi(
    value_fn: &dyn Fn(&[f64], &mut [f64]),
    outputs: usize,
    explicand: &[f64],
    background: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<Vec<AttributionEstimate>> {
    check_setting(explicand, background)?;
    if k == 0 {
        return Err(Error::InvalidConfig("sample count K must be >= 1".into()));
    }
    let p = explicand.len();
    let mut acc = Welford::new(outputs * p);
    let mut order: Vec<usize> = (0..p).collect();
    let mut x = vec![0.0; p];
    let mut prev = vec![0.0; outputs];
    let mut cur = vec![0.0; outputs];
    let mut marg = vec![0.0; outputs * p];
    for draw in 0..k {
        let mut rng = draw_rng(seed, draw);
        let z = &background[rng.random_range(0..background.len())];
        order.sort_unstable();
        order.shuffle(&mut rng);
        x.copy_from_slice(z);
        value_fn(&x, &mut prev);
        for &j in &order {
            x[j] = explicand[j];
            value_fn(&x, &mut cur);
            for o in 0..outputs {
                marg[o * p + j] = cur[o] - prev[o];
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        acc.push(&marg);
    }
    let se = acc.stderr();
    Ok((0..outputs)
        .map(|o| AttributionEstimate {
            phi: acc.mean[o * p..(o + 1) * p].to_vec(),
            stderr: se[o * p..(o + 1) * p].to_vec(),
            k,
            seed: Some(seed),
            background_size: background.len(),
        })
        .collect())
}

pub fn estimate_shapley<F: Fn(&[f64]) -> f64>(
    game: &ShapleyGame<F>,
    k: usize,
    seed: u64,
) -> Result<AttributionEstimate> {
    let mut est = estimate_shapley_multi(
        &game.scalar(),
        1,
        &game.explicand,
        &game.background,
        k,
        seed,
    )?;
    Ok(est.remove(0))
}

/// Interventional coalition values `v(S)`, indexed by bitmask, for every output.
fn coalition_values(
    value_fn: &dyn Fn(&[f64], &mut [f64]),
    outputs: usize,
    explicand: &[f64],
    background: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let p = explicand.len();
    let mut x = vec![0.0; p];
    let mut out = vec![0.0; outputs];
    (0..1usize << p)
        .map(|mask| {
            let mut sum = vec![0.0; outputs];
            for z in background {
                for j in 0..p {
                    x[j] = if mask >> j & 1 == 1 {
                        explicand[j]
                    } else {
                        z[j]
                    };
                }
                value_fn(&x, &mut out);
                for (s, v) in sum.iter_mut().zip(&out) {
                    *s += v;
                }
            }
            sum.iter().map(|s| s / background.len() as f64).collect()
        })
        .collect()
}

/// Exact Shapley values by enumerating all coalitions; `v(S)` averages the value
/// function over the background with features in `S` set to the explicand.
pub fn exact_shapley_multi(
    value_fn: &dyn Fn(&[f64], &mut [f64]),
    outputs: usize,
    explicand: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<AttributionEstimate>> {
    check_setting(explicand, background)?;
    let p = explicand.len();
    if p > EXACT_MAX_DIM {
        return Err(Error::Unsupported(format!(
            "exact Shapley enumeration limited to p <= {EXACT_MAX_DIM}, got {p}"
        )));
    }
    let v = coalition_values(value_fn, outputs, explicand, background);
    // weight for a coalition of size s not containing j: s! (p - s - 1)! / p!
    let fact: Vec<f64> = (0..=p)
        .scan(1.0, |f, i| {
            let out = *f;
            *f *= (i + 1) as f64;
            Some(out)
        })
        .collect();
    let weight: Vec<f64> = (0..p)
        .map(|s| fact[s] * fact[p - s - 1] / fact[p])
        .collect();
    let mut phi = vec![vec![0.0; p]; outputs];
    for mask in 0..1usize << p {
        let s = mask.count_ones() as usize;
        for j in 0..p {
            if mask >> j & 1 == 1 {
                continue;
            }
            let with = mask | 1 << j;
            for o in 0..outputs {
                phi[o][j] += weight[s] * (v[with][o] - v[mask][o]);
            }
        }
    }
    Ok(phi
        .into_iter()
        .map(|phi| AttributionEstimate {
            stderr: vec![0.0; p],
            phi,
            k: 1 << p,
            seed: None,
            background_size: background.len(),
        })
        .collect())
}

pub fn exact_shapley<F: Fn(&[f64]) -> f64>(game: &ShapleyGame<F>) -> Result<AttributionEstimate> {
    let mut est = exact_shapley_multi(&game.scalar(), 1, &game.explicand, &game.background)?;
    Ok(est.remove(0))
}

/// `f(explicand)` minus the background mean of `f`, per output.
pub fn compute_payout_multi(
    value_fn: &dyn Fn(&[f64], &mut [f64]),
    outputs: usize,
    explicand: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_setting(explicand, background)?;
    let mut out = vec![0.0; outputs];
    let mut mean = vec![0.0; outputs];
    for z in background {
        value_fn(z, &mut out);
        for (m, v) in mean.iter_mut().zip(&out) {
            *m += v;
        }
    }
    value_fn(explicand, &mut out);
    Ok(out
        .iter()
        .zip(&mean)
        .map(|(f, m)| f - m / background.len() as f64)
        .collect())
}

pub fn compute_payout<F: Fn(&[f64]) -> f64>(game: &ShapleyGame<F>) -> f64 {
    let mut out = compute_payout_multi(&game.scalar(), 1, &game.explicand, &game.background)
        .expect("game validated at construction");
    out.remove(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameCheck {
    #[serde(with = "numfmt")]
    pub payout: f64,
    #[serde(with = "numfmt")]
    pub efficiency_error: f64,
    /// Smallest gap between two attributions; infinite with a single feature.
    #[serde(with = "numfmt")]
    pub threshold: f64,
    pub sufficient: bool,
}

impl GameCheck {
    pub fn new(phi: &[f64], payout: f64) -> Self {
        let efficiency_error = (phi.iter().sum::<f64>() - payout).abs();
        let mut threshold = f64::INFINITY;
        for (i, a) in phi.iter().enumerate() {
            for b in &phi[i + 1..] {
                threshold = threshold.min((a - b).abs());
            }
        }
        // A tie leaves no gap to certify, so only an exact sum passes.
        let sufficient = efficiency_error < threshold || efficiency_error == 0.0;
        GameCheck {
            payout,
            efficiency_error,
            threshold,
            sufficient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyVerdict {
    pub games: BTreeMap<String, GameCheck>,
    pub overall: bool,
    pub k: usize,
    pub seed: Option<u64>,
    pub background_size: usize,
}

/// Compares each game's attribution sum with its payout against the smallest gap
/// between its attributions; the sample is large enough only if every game passes.
pub fn check_sample_size<'a, I>(games: I) -> AdequacyVerdict
where
    I: IntoIterator<Item = (&'a str, &'a AttributionEstimate, f64)>,
{
    let mut out = BTreeMap::new();
    let (mut k, mut seed, mut background_size) = (0, None, 0);
    for (name, est, payout) in games {
        k = est.k;
        seed = est.seed;
        background_size = est.background_size;
        out.insert(name.to_string(), GameCheck::new(&est.phi, payout));
    }
    AdequacyVerdict {
        overall: out.values().all(|g| g.sufficient),
        games: out,
        k,
        seed,
        background_size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearch {
    pub k: usize,
    pub sufficient: bool,
    pub tried: Vec<(usize, bool)>,
    pub verdict: AdequacyVerdict,
}

/// Doubles K from `start` until `verdict_at(K)` passes or `cap` has been tried.
pub fn search_sample_size<F>(start: usize, cap: usize, mut verdict_at: F) -> Result<KSearch>
where
    F: FnMut(usize) -> Result<AdequacyVerdict>,
{
    if start == 0 || cap < start {
        return Err(Error::InvalidConfig(format!(
            "K search needs 1 <= start <= cap, got start {start}, cap {cap}"
        )));
    }
    let mut k = start;
    let mut tried = Vec::new();
    loop {
        let verdict = verdict_at(k)?;
        tried.push((k, verdict.overall));
        if verdict.overall || k >= cap {
            return Ok(KSearch {
                k,
                sufficient: verdict.overall,
                tried,
                verdict,
            });
        }
        k = (k * 2).min(cap);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn uniform_background(seed: u64, n: usize, p: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Random polynomial game with pairwise interactions.
    fn random_fn(seed: u64, p: usize) -> impl Fn(&[f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lin: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let quad: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        move |t: &[f64]| {
            let mut s = 0.0;
            for i in 0..t.len() {
                s += lin[i] * t[i];
                for j in 0..t.len() {
                    s += quad[i][j] * t[i] * t[j];
                }
            }
            s + (t[0] * 1.7).sin()
        }
    }

    #[test]
    fn additive_closed_form() {
        let g = ShapleyGame::new(
            |t: &[f64]| t[0] + 2.0 * t[1],
            vec![1.0, 1.0],
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        )
        .unwrap();
        let exact = exact_shapley(&g).unwrap();
        assert!((exact.phi[0] - 0.5).abs() < 1e-12 && (exact.phi[1] - 1.0).abs() < 1e-12);
        // additive games have constant marginals given z, so MC averages the same terms
        for k in [1, 7, 100] {
            let est = estimate_shapley(&g, k, 3).unwrap();
            let z_share = est.phi[1] / est.phi[0];
            assert!((z_share - 2.0).abs() < 1e-12 || est.phi[0] == 0.0);
        }
        let est = estimate_shapley(&g, 20_000, 3).unwrap();
        assert!((est.phi[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn dummy_feature_is_exactly_zero() {
        let bg = uniform_background(1, 30, 2);
        let g = ShapleyGame::new(|t: &[f64]| t[0] * t[0] + 3.0, vec![0.4, -0.9], bg).unwrap();
        for k in [1, 2, 10, 500] {
            assert_eq!(estimate_shapley(&g, k, 11).unwrap().phi[1], 0.0);
        }
    }

    #[test]
    fn symmetric_product() {
        let bg = vec![
            vec![0.0, 0.5],
            vec![0.5, 0.0],
            vec![-1.0, 2.0],
            vec![2.0, -1.0],
        ];
        let g = ShapleyGame::new(|t: &[f64]| t[0] * t[1], vec![1.0, 1.0], bg).unwrap();
        let e = exact_shapley(&g).unwrap();
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-12);
    }

    #[test]
    fn payout_cases() {
        let bg = uniform_background(2, 20, 3);
        let c = ShapleyGame::new(|_: &[f64]| 4.2, vec![0.1, 0.2, 0.3], bg.clone()).unwrap();
        assert!(compute_payout(&c).abs() < 1e-12);
        let one = ShapleyGame::new(
            |t: &[f64]| t[0].exp(),
            vec![0.3, 0.3, 0.3],
            vec![vec![0.3; 3]],
        )
        .unwrap();
        assert_eq!(compute_payout(&one), 0.0);
        let f = random_fn(9, 3);
        let g = ShapleyGame::new(&f, vec![0.5, -0.2, 0.9], bg).unwrap();
        assert!((exact_shapley(&g).unwrap().sum() - compute_payout(&g)).abs() < 1e-10);
    }

    #[test]
    fn exact_refuses_large_dim() {
        let g = ShapleyGame::new(|t: &[f64]| t[0], vec![0.0; 11], vec![vec![1.0; 11]]).unwrap();
        assert!(matches!(exact_shapley(&g), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(ShapleyGame::new(|t: &[f64]| t[0], vec![0.0], vec![]).is_err());
        assert!(ShapleyGame::new(|t: &[f64]| t[0], vec![0.0], vec![vec![1.0, 2.0]]).is_err());
        let g = ShapleyGame::new(|t: &[f64]| t[0], vec![0.0], vec![vec![1.0]]).unwrap();
        assert!(estimate_shapley(&g, 0, 1).is_err());
    }

    #[test]
    fn mc_within_three_stderr() {
        let (mut hits, mut total) = (0, 0);
        for trial in 0..100u64 {
            let f = random_fn(1000 + trial, 4);
            let bg = uniform_background(trial, 40, 4);
            let g = ShapleyGame::new(&f, vec![0.8, -0.6, 0.3, 0.9], bg).unwrap();
            let exact = exact_shapley(&g).unwrap();
            let est = estimate_shapley(&g, 1000, trial).unwrap();
            for j in 0..4 {
                total += 1;
                if (est.phi[j] - exact.phi[j]).abs() <= 3.0 * est.stderr[j] {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn stderr_scales_with_root_k() {
        let mut ratios = Vec::new();
        for trial in 0..50u64 {
            let f = random_fn(trial, 3);
            let bg = uniform_background(trial + 77, 60, 3);
            let g = ShapleyGame::new(&f, vec![0.5, 0.5, -0.5], bg).unwrap();
            let med = |e: AttributionEstimate| {
                let mut s = e.stderr.clone();
                s.sort_by(f64::total_cmp);
                s[1]
            };
            let a = med(estimate_shapley(&g, 250, trial).unwrap());
            let b = med(estimate_shapley(&g, 1000, trial + 1_000).unwrap());
            ratios.push(a / b);
        }
        ratios.sort_by(f64::total_cmp);
        let median = (ratios[24] + ratios[25]) / 2.0;
        assert!((1.6..=2.4).contains(&median), "median ratio {median}");
    }

    #[test]
    fn counter_seeding_is_prefix_stable() {
        let f = random_fn(4, 3);
        let bg = uniform_background(5, 25, 3);
        let short =
            estimate_shapley_multi(&|t, o| o[0] = f(t), 1, &[0.1, 0.2, 0.3], &bg, 1, 42).unwrap();
        let explicit = {
            let mut rng = draw_rng(42, 0);
            let z = bg[rng.random_range(0..bg.len())].clone();
            let mut order = vec![0, 1, 2];
            order.shuffle(&mut rng);
            let mut x = z;
            let mut prev = f(&x);
            let mut m = vec![0.0; 3];
            for j in order {
                x[j] = [0.1, 0.2, 0.3][j];
                let cur = f(&x);
                m[j] = cur - prev;
                prev = cur;
            }
            m
        };
        assert_eq!(short[0].phi, explicit);
    }

    #[test]
    fn shared_draws_make_linearity_exact() {
        let bg = uniform_background(8, 100, 3);
        let m = random_fn(1, 3);
        let s = random_fn(2, 3);
        let lambda = 20.0;
        let both = estimate_shapley_multi(
            &|t, o| {
                o[0] = m(t);
                o[1] = s(t);
            },
            2,
            &[0.3, -0.1, 0.7],
            &bg,
            500,
            9,
        )
        .unwrap();
        let cb =
            ShapleyGame::new(|t: &[f64]| m(t) - lambda * s(t), vec![0.3, -0.1, 0.7], bg).unwrap();
        let direct = estimate_shapley(&cb, 500, 9).unwrap();
        for j in 0..3 {
            let combined = both[0].phi[j] - lambda * both[1].phi[j];
            assert!((combined - direct.phi[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn worked_sample_size_case() {
        let verdict = |payout: f64| {
            let est = AttributionEstimate {
                phi: vec![2.0, 3.0],
                stderr: vec![0.1, 0.1],
                k: 100,
                seed: Some(0),
                background_size: 10,
            };
            check_sample_size([("cb", &est, payout)])
        };
        let pass = verdict(5.5);
        assert_eq!(pass.games["cb"].threshold, 1.0);
        assert_eq!(pass.games["cb"].efficiency_error, 0.5);
        assert!(pass.overall);
        let fail = verdict(6.5);
        assert_eq!(fail.games["cb"].efficiency_error, 1.5);
        assert!(!fail.overall);
    }

    #[test]
    fn tie_and_single_feature_rules() {
        let tie = GameCheck::new(&[1.0, 1.0], 2.0 + 1e-9);
        assert_eq!(tie.threshold, 0.0);
        assert!(!tie.sufficient);
        assert!(GameCheck::new(&[1.0, 1.0], 2.0).sufficient);
        let single = GameCheck::new(&[4.0], 100.0);
        assert!(single.threshold.is_infinite() && single.sufficient);
    }

    #[test]
    fn exact_estimates_are_sufficient() {
        let f = random_fn(3, 3);
        let g = ShapleyGame::new(&f, vec![0.2, 0.9, -0.4], uniform_background(3, 15, 3)).unwrap();
        let e = exact_shapley(&g).unwrap();
        let v = check_sample_size([("v", &e, compute_payout(&g))]);
        assert!(v.games["v"].efficiency_error < 1e-12 && v.overall);
    }

    #[test]
    fn forward_search_doubles_until_sufficient() {
        let g = ShapleyGame::new(
            |t: &[f64]| t[0] + 1.1 * t[1] + 1.2 * t[2] + 1.3 * t[3],
            vec![1.0; 4],
            uniform_background(12, 1000, 4),
        )
        .unwrap();
        let payout = compute_payout(&g);
        let at = |k: usize| {
            let e = estimate_shapley(&g, k, 2024).unwrap();
            check_sample_size([("v", &e, payout)])
        };
        let v10 = at(10);
        assert!(!v10.overall, "{v10:?}");
        assert!(at(10_000).overall);
        let search = search_sample_size(10, K_CAP, |k| Ok(at(k))).unwrap();
        assert!(search.sufficient);
        for w in search.tried.windows(2) {
            assert_eq!(w[1].0, w[0].0 * 2);
            assert!(!w[0].1);
        }
    }

    #[test]
    fn verdict_json_keeps_infinite_threshold() {
        let e = AttributionEstimate {
            phi: vec![1.0],
            stderr: vec![0.0],
            k: 5,
            seed: Some(1),
            background_size: 3,
        };
        let v = check_sample_size([("m", &e, 1.0)]);
        let s = serde_json::to_string(&v).unwrap();
        let back: AdequacyVerdict = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(back.games["m"].threshold.is_infinite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn exact_axioms(seed in any::<u64>(), p in 1usize..=5, a in -3f64..3.0, b in -3f64..3.0) {
            let f = random_fn(seed, p);
            let g2 = random_fn(seed.wrapping_add(1), p);
            let bg = uniform_background(seed ^ 0x55, 8, p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gf = ShapleyGame::new(&f, x.clone(), bg.clone()).unwrap();
            let gg = ShapleyGame::new(&g2, x.clone(), bg.clone()).unwrap();
            let ef = exact_shapley(&gf).unwrap();
            let eg = exact_shapley(&gg).unwrap();
            prop_assert!((ef.sum() - compute_payout(&gf)).abs() < 1e-10);
            let combo = ShapleyGame::new(|t: &[f64]| a * f(t) + b * g2(t), x.clone(), bg.clone()).unwrap();
            let ec = exact_shapley(&combo).unwrap();
            for j in 0..p {
                prop_assert!((ec.phi[j] - (a * ef.phi[j] + b * eg.phi[j])).abs() < 1e-10);
            }
            // last feature made a dummy
            let dummy = ShapleyGame::new(
                |t: &[f64]| { let mut u = t.to_vec(); u[p - 1] = 0.0; f(&u) },
                x.clone(), bg.clone()).unwrap();
            prop_assert!(exact_shapley(&dummy).unwrap().phi[p - 1].abs() < 1e-10);
            let scaled = ShapleyGame::new(|t: &[f64]| 3.5 * f(t), x, bg).unwrap();
            let es = exact_shapley(&scaled).unwrap();
            for j in 0..p {
                prop_assert!((es.phi[j] - 3.5 * ef.phi[j]).abs() < 1e-10);
            }
        }
    }
}
