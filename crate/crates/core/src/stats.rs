//! Box-plot summaries, one-way ANOVA, pairwise tests and z-score outlier
//! filtering, with the special functions they need.

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn inc_gamma_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        1.0 - sum * ln_front.exp()
    } else {
        // continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        ln_front.exp() * h
    }
}

/// `P(Z > z)` for a standard normal.
pub fn normal_sf(z: f64) -> f64 {
    let q = 0.5 * inc_gamma_upper(0.5, z * z / 2.0);
    if z >= 0.0 {
        q
    } else {
        1.0 - q
    }
}

/// `P(F > f)` for an F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Two-sided `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// descriptive

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(x: &[f64]) -> Result<BoxStats> {
    if x.is_empty() {
        return Err(Error::InsufficientData("box statistics need at least one value".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || s.iter().copied().filter(|&v| v >= lo_fence && v <= hi_fence);
    let whisker_lo = inside().next().unwrap_or(median);
    let whisker_hi = inside().next_back().unwrap_or(median);
    let outliers = s.iter().copied().filter(|&v| v < lo_fence || v > hi_fence).collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        outliers,
    })
}

/// Split `values` into those with `|z| <= 3` and those beyond, using one
/// pass of the population z-score. Constant input removes nothing.
pub fn z_outlier_filter(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = dsp::mean(values);
    let sd = dsp::std_dev(values);
    if values.len() < 2 || sd == 0.0 || !sd.is_finite() {
        return (values.to_vec(), Vec::new());
    }
    values.iter().partition(|&&v| ((v - m) / sd).abs() <= 3.0)
}

// ---------------------------------------------------------------------------
// tests of location

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("ANOVA needs at least 2 groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "each ANOVA group needs at least 2 values, got {}",
            g.len()
        )));
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = dsp::mean(g);
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let (df_between, df_within) = (k - 1, n - k);
    let scale = groups
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, v| a.max((v - grand).abs()));
    let negligible = |ss: f64| ss <= (1e-12 * scale).powi(2) * n as f64;
    if negligible(ss_within) {
        if negligible(ss_between) {
            return Err(Error::Degenerate("all ANOVA values are equal".into()));
        }
        return Ok(AnovaResult {
            f_stat: f64::INFINITY,
            p_value: 0.0,
            df_between,
            df_within,
        });
    }
    let f_stat = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    Ok(AnovaResult {
        f_stat,
        p_value: f_sf(f_stat, df_between as f64, df_within as f64),
        df_between,
        df_within,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMethod {
    StudentT,
    WelchT,
    MannWhitneyU,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: PairwiseMethod,
    /// Degrees of freedom for the t variants.
    pub df: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TVariant {
    #[default]
    Student,
    Welch,
}

pub fn independent_t(a: &[f64], b: &[f64], variant: TVariant) -> Result<PairwiseResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (dsp::mean(a), dsp::mean(b));
    let (va, vb) = (dsp::sample_variance(a), dsp::sample_variance(b));
    let (se2, df) = match variant {
        TVariant::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
        TVariant::Welch => {
            let (sa, sb) = (va / na, vb / nb);
            let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            (sa + sb, df)
        }
    };
    let method = match variant {
        TVariant::Student => PairwiseMethod::StudentT,
        TVariant::Welch => PairwiseMethod::WelchT,
    };
    if se2 == 0.0 {
        if ma == mb {
            return Err(Error::Degenerate("both samples constant and equal".into()));
        }
        return Ok(PairwiseResult {
            statistic: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
            p_value: 0.0,
            method,
            df: Some(na + nb - 2.0),
        });
    }
    let t = (ma - mb) / se2.sqrt();
    Ok(PairwiseResult {
        statistic: t,
        p_value: t_two_sided_p(t, df),
        method,
        df: Some(df),
    })
}

/// `U` of sample `a` (count of pairs with `a > b`, ties counting half) with
/// a two-sided tie-corrected normal approximation and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<PairwiseResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("Mann-Whitney needs non-empty samples".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += avg_rank * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (na_f, nb_f, n_f) = (na as f64, nb as f64, n as f64);
    let u = rank_sum_a - na_f * (na_f + 1.0) / 2.0;
    let mu = na_f * nb_f / 2.0;
    let var = if n > 1 {
        na_f * nb_f / 12.0 * ((n_f + 1.0) - tie_term / (n_f * (n_f - 1.0)))
    } else {
        0.0
    };
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(PairwiseResult {
        statistic: u,
        p_value,
        method: PairwiseMethod::MannWhitneyU,
        df: None,
    })
}

/// Star labels: `****` p <= 1e-4, `***` <= .001, `**` <= .01, `*` <= .05,
/// `ns` <= .1, blank above.
pub fn significance_label(p: f64) -> &'static str {
    match p {
        p if p <= 1e-4 => "****",
        p if p <= 1e-3 => "***",
        p if p <= 1e-2 => "**",
        p if p <= 0.05 => "*",
        p if p <= 0.1 => "ns",
        _ => "",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // -- independent oracle: adaptive Gauss-Kronrod on unnormalized densities

    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];

    fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let dx = h * XGK[j];
            let s = f(c - dx) + f(c + dx);
            k += WGK[j] * s;
            if j % 2 == 1 {
                g += WG[j / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }

    fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        integrate(f, a, m, tol / 2.0, depth - 1) + integrate(f, m, b, tol / 2.0, depth - 1)
    }

    /// `∫_x^∞ f`, mapping `[x, ∞)` onto `[0, 1)`.
    fn tail(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
        let g = |u: f64| {
            let w = 1.0 - u;
            f(x + u / w) / (w * w)
        };
        integrate(&g, 0.0, 1.0, 1e-14, 40)
    }

    /// `∫_0^∞ f`, with `y = s^2` on `[0, 1]` to tame `y^(-1/2)` at zero.
    fn total(f: &dyn Fn(f64) -> f64) -> f64 {
        let head = |s: f64| 2.0 * s * f(s * s);
        integrate(&head, 0.0, 1.0, 1e-14, 40) + tail(f, 1.0)
    }

    fn oracle_f_sf(x: f64, d1: f64, d2: f64) -> f64 {
        let dens = move |y: f64| {
            if y <= 0.0 {
                0.0
            } else {
                y.powf(d1 / 2.0 - 1.0) * (1.0 + d1 * y / d2).powf(-(d1 + d2) / 2.0)
            }
        };
        tail(&dens, x) / total(&dens)
    }

    fn oracle_t_p(t: f64, df: f64) -> f64 {
        let dens = move |y: f64| (1.0 + y * y / df).powf(-(df + 1.0) / 2.0);
        2.0 * tail(&dens, t.abs()) / (2.0 * tail(&dens, 0.0))
    }

    fn oracle_normal_sf(z: f64) -> f64 {
        let dens = |y: f64| (-0.5 * y * y).exp();
        let sf = if z >= 0.0 {
            tail(&dens, z)
        } else {
            tail(&dens, 0.0) + integrate(&dens, z, 0.0, 1e-14, 40)
        };
        sf / (2.0 * PI).sqrt()
    }

    #[test]
    fn special_functions_match_oracle() {
        for &d2 in &[2.0, 3.0, 5.0, 10.0, 30.0, 72.0] {
            for &d1 in &[1.0, 2.0, 3.0, 5.0] {
                for &x in &[0.05, 0.5, 1.0, 2.5, 5.228, 12.0] {
                    let (got, want) = (f_sf(x, d1, d2), oracle_f_sf(x, d1, d2));
                    assert!((got - want).abs() < 1e-9, "F({d1},{d2}) at {x}: {got} vs {want}");
                }
            }
        }
        for &df in &[1.0, 2.0, 4.0, 7.5, 36.0, 100.0] {
            for &t in &[0.0, 0.3, 1.2247, 2.0, 4.0, 9.0] {
                let (got, want) = (t_two_sided_p(t, df), oracle_t_p(t, df));
                assert!((got - want).abs() < 1e-9, "t({df}) at {t}: {got} vs {want}");
            }
        }
        for &z in &[-3.0, -1.0, 0.0, 0.5, 1.96, 4.0, 6.0] {
            let (got, want) = (normal_sf(z), oracle_normal_sf(z));
            assert!((got - want).abs() < 1e-9, "z {z}: {got} vs {want}");
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn anova_examples() {
        let r = one_way_anova(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], &[3.0, 4.0, 5.0]]).unwrap();
        assert!((r.f_stat - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        let same = [1.0, 5.0, 2.0];
        let r = one_way_anova(&[&same, &same, &same]).unwrap();
        assert_eq!(r.f_stat, 0.0);
        assert_eq!(r.p_value, 1.0);
        let g = [0.0; 19];
        let r = one_way_anova(&[&[1.0; 19], &g, &[0.5; 19], &[2.0; 19]]).unwrap();
        assert_eq!((r.df_between, r.df_within), (3, 72));
        assert_eq!(r.p_value, 0.0);
        assert!(matches!(one_way_anova(&[&[2.0, 2.0], &[2.0, 2.0]]), Err(Error::Degenerate(_))));
        assert!(one_way_anova(&[&[1.0], &[2.0, 3.0]]).is_err());
    }

    #[test]
    fn t_examples() {
        let r = independent_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], TVariant::Student).unwrap();
        assert!((r.statistic + 1.224_744_871_391_589).abs() < 1e-12);
        assert_eq!(r.df, Some(4.0));
        assert!((r.p_value - 0.2879).abs() < 1e-4);
        let a = [1.0, 4.0, 2.5];
        let r = independent_t(&a, &a, TVariant::Welch).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert!(matches!(
            independent_t(&[3.0, 3.0], &[3.0, 3.0], TVariant::Student),
            Err(Error::Degenerate(_))
        ));
        let w = independent_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 9.0, 4.0], TVariant::Welch).unwrap();
        assert!(w.df.unwrap() < 5.0);
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney_u(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 9.0);
        let a = [1.0, 2.0, 2.0, 7.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert!(r.p_value > 0.99);
        let r = mann_whitney_u(&[1.0; 5], &[1.0; 5]).unwrap();
        assert_eq!(r.p_value, 1.0);
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 1.3).collect();
        let b: Vec<f64> = (0..19).map(|i| 5.0 + i as f64 * 0.7).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!((0.0..=361.0).contains(&r.statistic));
    }

    /// Direct pair counting.
    fn u_by_pairs(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for x in a {
            for y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    #[test]
    fn box_examples() {
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let b = box_stats(&x).unwrap();
        assert_eq!((b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi), (5.0, 3.0, 7.0, 1.0, 9.0));
        assert!(b.outliers.is_empty());
        let b = box_stats(&[4.2]).unwrap();
        assert_eq!((b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi), (4.2, 4.2, 4.2, 4.2, 4.2));
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.whisker_hi, 4.0);
        assert!(box_stats(&[]).is_err());
    }

    #[test]
    fn z_outlier_examples() {
        // population z of the 100 is exactly 2, so it stays
        let (kept, removed) = z_outlier_filter(&[0.0, 0.0, 0.0, 0.0, 100.0]);
        assert_eq!(kept.len(), 5);
        assert!(removed.is_empty());
        let z = (100.0 - dsp::mean(&[0.0, 0.0, 0.0, 0.0, 100.0])) / dsp::std_dev(&[0.0, 0.0, 0.0, 0.0, 100.0]);
        assert!((z - 2.0).abs() < 1e-12);
        // with enough company the same point is removed
        let mut v = vec![0.0; 19];
        v.push(100.0);
        let (kept, removed) = z_outlier_filter(&v);
        assert_eq!(removed, vec![100.0]);
        assert_eq!(kept.len(), 19);
        assert!(z_outlier_filter(&[3.0; 6]).1.is_empty());
        assert!(z_outlier_filter(&[-2.0, -1.0, 0.0, 1.0, 2.0]).1.is_empty());
    }

    #[test]
    fn legend() {
        assert_eq!(significance_label(0.00005), "****");
        assert_eq!(significance_label(0.003), "**");
        assert_eq!(significance_label(0.007), "**");
        assert_eq!(significance_label(0.001), "***");
        assert_eq!(significance_label(0.04), "*");
        assert_eq!(significance_label(0.07), "ns");
        assert_eq!(significance_label(0.3), "");
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, 2..25)
    }

    proptest! {
        #[test]
        fn two_group_anova_is_t_squared(a in sample(), b in sample()) {
            let (Ok(f), Ok(t)) = (one_way_anova(&[&a, &b]), independent_t(&a, &b, TVariant::Student)) else {
                return Ok(());
            };
            prop_assume!(f.f_stat.is_finite());
            prop_assert!((f.f_stat - t.statistic.powi(2)).abs() <= 1e-9 * f.f_stat.max(1.0));
            prop_assert!((f.p_value - t.p_value).abs() <= 1e-9);
        }

        #[test]
        fn anova_shift_and_scale(a in sample(), b in sample(), c in sample(), shift in -1e3f64..1e3, scale in 0.01f64..100.0) {
            let Ok(base) = one_way_anova(&[&a, &b, &c]) else { return Ok(()) };
            prop_assume!(base.f_stat.is_finite());
            let sh = |g: &[f64]| g.iter().map(|v| v + shift).collect::<Vec<_>>();
            let sc = |g: &[f64]| g.iter().map(|v| v * scale).collect::<Vec<_>>();
            let s = one_way_anova(&[&sh(&a), &sh(&b), &sh(&c)]).unwrap();
            let k = one_way_anova(&[&sc(&a), &sc(&b), &sc(&c)]).unwrap();
            prop_assert!((s.f_stat - base.f_stat).abs() <= 1e-6 * base.f_stat.max(1.0));
            prop_assert!((s.p_value - base.p_value).abs() <= 1e-6);
            prop_assert!((k.f_stat - base.f_stat).abs() <= 1e-9 * base.f_stat.max(1.0));
            prop_assert!(base.f_stat >= 0.0 && (0.0..=1.0).contains(&base.p_value));
        }

        #[test]
        fn t_is_scale_invariant(a in sample(), b in sample(), k in 0.01f64..100.0) {
            let Ok(t) = independent_t(&a, &b, TVariant::Student) else { return Ok(()) };
            let sa: Vec<f64> = a.iter().map(|v| v * k).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * k).collect();
            let ts = independent_t(&sa, &sb, TVariant::Student).unwrap();
            prop_assert!((t.statistic - ts.statistic).abs() <= 1e-9 * t.statistic.abs().max(1.0));
            prop_assert!((t.p_value - ts.p_value).abs() <= 1e-9);
        }

        #[test]
        fn u_invariant_under_monotone_maps(a in proptest::collection::vec(-5i32..5, 1..20), b in proptest::collection::vec(-5i32..5, 1..20)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = mann_whitney_u(&a, &b).unwrap();
            prop_assert_eq!(r.statistic, u_by_pairs(&a, &b));
            let f = |v: &f64| (v / 2.0).exp() * 3.0 - 7.0;
            let ra = mann_whitney_u(&a.iter().map(f).collect::<Vec<_>>(), &b.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(r.statistic, ra.statistic);
            prop_assert!((r.p_value - ra.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.statistic >= 0.0 && r.statistic <= (a.len() * b.len()) as f64);
        }

        #[test]
        fn box_partitions_sample(x in proptest::collection::vec(-1e3f64..1e3, 1..60), spikes in proptest::collection::vec(-1e5f64..1e5, 0..4)) {
            let mut x = x;
            x.extend(spikes);
            let b = box_stats(&x).unwrap();
            prop_assert!(b.q1 <= b.median && b.median <= b.q3);
            let inside = x.iter().filter(|&&v| v >= b.whisker_lo && v <= b.whisker_hi).count();
            prop_assert_eq!(inside + b.outliers.len(), x.len());
            prop_assert!(x.contains(&b.whisker_lo) && x.contains(&b.whisker_hi));
        }

        #[test]
        fn z_filter_partitions(x in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
            let (kept, removed) = z_outlier_filter(&x);
            prop_assert_eq!(kept.len() + removed.len(), x.len());
        }
    }
}
