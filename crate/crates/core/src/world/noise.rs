use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Multi-octave value noise on an `height x width` grid, normalized to [0, 1].
///
/// Each octave halves the lattice cell and scales the amplitude by
/// `persistence`; lattice values are blended with smoothstep weights.
pub fn value_noise(
    seed: u64,
    height: usize,
    width: usize,
    base_cell: usize,
    octaves: usize,
    persistence: f64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0.0f64; height * width];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    let mut cell = base_cell.max(1) as f64;
    for _ in 0..octaves {
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
        let (oy, ox): (f64, f64) = (rng.gen(), rng.gen());
        for y in 0..height {
            let fy = (y as f64 + 0.5) / cell + oy;
            let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
            for x in 0..width {
                let fx = (x as f64 + 0.5) / cell + ox;
                let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                field[y * width + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        total += amplitude;
        amplitude *= persistence;
        cell = (cell / 2.0).max(1.0);
    }
    field.iter_mut().for_each(|v| *v /= total);
    field
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
