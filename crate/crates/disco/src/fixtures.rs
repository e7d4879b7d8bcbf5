//! Small hand-built networks and seeded generators shared by unit,
//! integration and acceptance tests. Not part of the stable API.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Layer, Network};
use crate::rat::{frac, int, Rat};

/// 1-input, 1-ReLU network computing `relu(x)`.
pub fn identity_network() -> Network {
    Network::new(
        1,
        vec![
            Layer {
                weights: vec![vec![int(1)]],
                bias: vec![int(0)],
                has_relu: true,
            },
            Layer {
                weights: vec![vec![int(1)]],
                bias: vec![int(0)],
                has_relu: false,
            },
        ],
    )
    .unwrap()
}

/// 2-input toy net with one hidden layer of three ReLU neurons
/// y1 = x1 - 1, y2 = x2 - 1, y3 = x1 + x2. On the box [-2, 2]^2 the
/// pattern (1,1,0) is unreachable, so 7 of the 8 patterns are facets, and
/// the origin lies in the (0,0,1) region.
pub fn toy_network() -> Network {
    Network::new(
        2,
        vec![
            Layer {
                weights: vec![
                    vec![int(1), int(0)],
                    vec![int(0), int(1)],
                    vec![int(1), int(1)],
                ],
                bias: vec![int(-1), int(-1), int(0)],
                has_relu: true,
            },
            Layer {
                weights: vec![vec![int(1), int(1), int(1)]],
                bias: vec![int(0)],
                has_relu: false,
            },
        ],
    )
    .unwrap()
}

/// 3-input net whose hidden hyperplanes are the coordinate planes; all
/// 2^3 activation patterns are feasible on any box straddling the origin.
pub fn axis_network() -> Network {
    Network::new(
        3,
        vec![
            Layer {
                weights: vec![
                    vec![int(1), int(0), int(0)],
                    vec![int(0), int(1), int(0)],
                    vec![int(0), int(0), int(1)],
                ],
                bias: vec![int(0), int(0), int(0)],
                has_relu: true,
            },
            Layer {
                weights: vec![vec![int(1), int(1), int(1)]],
                bias: vec![int(0)],
                has_relu: false,
            },
        ],
    )
    .unwrap()
}

/// 1-input chain of `depth` ReLU layers with unit weight and zero bias.
pub fn chain_network(depth: usize) -> Network {
    let mut layers = Vec::new();
    for _ in 0..depth {
        layers.push(Layer {
            weights: vec![vec![int(1)]],
            bias: vec![int(0)],
            has_relu: true,
        });
    }
    layers.push(Layer {
        weights: vec![vec![int(1)]],
        bias: vec![int(0)],
        has_relu: false,
    });
    Network::new(1, layers).unwrap()
}

/// Seeded random network with dyadic weights in [-2, 2] (multiples of 1/8)
/// and a width-1 affine head. Small denominators keep exact LP pivots cheap.
pub fn random_network(seed: u64, input_dim: usize, hidden: &[usize]) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut prev = input_dim;
    let draw = |rng: &mut ChaCha8Rng| -> Rat { frac(rng.gen_range(-16..=16), 8) };
    for &w in hidden {
        let weights = (0..w)
            .map(|_| (0..prev).map(|_| draw(&mut rng)).collect())
            .collect();
        let bias = (0..w).map(|_| draw(&mut rng)).collect();
        layers.push(Layer {
            weights,
            bias,
            has_relu: true,
        });
        prev = w;
    }
    layers.push(Layer {
        weights: vec![(0..prev).map(|_| draw(&mut rng)).collect()],
        bias: vec![draw(&mut rng)],
        has_relu: false,
    });
    Network::new(input_dim, layers).unwrap()
}

/// Uniform rational sample in a box, on a fine dyadic grid (denominator 2^12).
pub fn sample_in_box(rng: &mut ChaCha8Rng, bx: &[(Rat, Rat)]) -> Vec<Rat> {
    bx.iter()
        .map(|(lo, hi)| {
            let t = frac(rng.gen_range(0..=4096), 4096);
            lo + (hi - lo) * t
        })
        .collect()
}
