#![allow(dead_code)]

use rand::Rng as _;
use tinyforge::ir::{fuse_activations, GraphBuilder, ModelGraph};
use tinyforge::quant::quantize_with;
use tinyforge::rng::{seeded, Rng};

pub fn uniform(rng: &mut Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn inputs_for(g: &ModelGraph, n: usize, seed: u64) -> Vec<Vec<f32>> {
    let len = g.input_spec().unwrap().elements();
    let mut rng = seeded(seed);
    (0..n).map(|_| uniform(&mut rng, len, -1.0, 1.0)).collect()
}

/// A random supported float graph: optional conv blocks, dense head,
/// optional softmax; some are a single k-means distance node.
pub fn random_graph(seed: u64) -> ModelGraph {
    let mut rng = seeded(seed);
    if rng.random_bool(0.1) {
        let dim = rng.random_range(2..12);
        let k = rng.random_range(1..5);
        let c = uniform(&mut rng, k * dim, -1.0, 1.0);
        let mut b = GraphBuilder::new(&[1, dim]);
        b.kmeans_distance(k, c).unwrap();
        return b.finish().unwrap();
    }
    let conv = rng.random_bool(0.7);
    let (len, ch) = if conv {
        (rng.random_range(6..24), rng.random_range(1..5))
    } else {
        (1, rng.random_range(2..24))
    };
    let mut b = GraphBuilder::new(&[len, ch]);
    if conv {
        for _ in 0..rng.random_range(1..4) {
            let shape = b.current_shape().to_vec();
            if shape.len() != 2 || shape[0] < 3 {
                break;
            }
            let (l, c) = (shape[0], shape[1]);
            let k = rng.random_range(1..=3.min(l));
            let f = rng.random_range(2..8);
            let s = rng.random_range(1..3);
            let w = uniform(&mut rng, f * k * c, -0.5, 0.5);
            let bias = uniform(&mut rng, f, -0.2, 0.2);
            b.conv1d_with(f, k, s, w, bias).unwrap();
            if rng.random_bool(0.6) {
                b.relu().unwrap();
            }
            if rng.random_bool(0.5) && b.current_shape()[0] >= 2 {
                b.maxpool1d(2, 2).unwrap();
            }
        }
        if rng.random_bool(0.5) {
            b.flatten().unwrap();
        }
    }
    for i in 0..rng.random_range(1..3) {
        if i > 0 {
            b.relu().unwrap();
        }
        let fan_in: usize = b.current_shape().iter().product();
        let units = rng.random_range(2..9);
        let w = uniform(&mut rng, fan_in * units, -0.5, 0.5);
        let bias = uniform(&mut rng, units, -0.2, 0.2);
        b.dense_with(units, w, bias).unwrap();
    }
    if rng.random_bool(0.5) {
        b.softmax().unwrap();
    }
    let g = b.finish().unwrap();
    if rng.random_bool(0.5) {
        fuse_activations(&g)
    } else {
        g
    }
}

pub fn quantized(g: &ModelGraph, seed: u64) -> ModelGraph {
    quantize_with(g, &inputs_for(g, 16, seed)).unwrap().graph
}

pub fn max_rel_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (f64::from(x), f64::from(y));
            (x - y).abs() / x.abs().max(y.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
