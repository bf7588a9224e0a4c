//! Gauss–Legendre rules.

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// The eight Gauss–Legendre nodes and weights mapped to [a, b].
pub fn gl8_nodes(a: f64, b: f64) -> [(f64, f64); 8] {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for i in 0..4 {
        out[2 * i] = (c - r * GL8_X[i], r * GL8_W[i]);
        out[2 * i + 1] = (c + r * GL8_X[i], r * GL8_W[i]);
    }
    out
}

pub fn gl8<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    gl8_nodes(a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

/// Composite 8-point rule over consecutive breakpoints.
pub fn composite_gl8<F: FnMut(f64) -> f64>(breaks: &[f64], mut f: F) -> f64 {
    breaks.windows(2).map(|w| gl8(w[0], w[1], &mut f)).sum()
}

/// Uniform composite rule with `panels` panels.
pub fn uniform_gl8<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let breaks: Vec<f64> = (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
    composite_gl8(&breaks, f)
}
