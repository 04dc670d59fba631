// SPDX-License-Identifier: Apache-2.0

//! Synthetic datasets and the built-in query workloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pvmw_core::query::TableQuery;
use pvmw_core::{Dataset, Example, LinearVectorQuery, QueryBuffer};

use crate::spec::QueryFamily;

/// splitmix64 finalizer, for deriving independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DATA_SALT: u64 = 1;
const WORKLOAD_SALT: u64 = 2;

/// Fills `out` with a uniformly random unit vector.
pub fn random_unit_vector<R: Rng>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut sq = 0.0;
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
            sq += *x * *x;
        }
        if sq > 0.0 {
            let inv = 1.0 / sq.sqrt();
            out.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// Uniform private values. Public payloads are `[i]` for the table family and
/// `[i, a_i]` with a random unit feature `a_i` in `R^d` otherwise.
pub fn synthetic_dataset(n: usize, k: usize, d: usize, family: QueryFamily, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, DATA_SALT));
    let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let examples = privs
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut public = vec![0.0; 1 + if family == QueryFamily::RandomTable { 0 } else { d }];
            public[0] = i as f64;
            if family != QueryFamily::RandomTable {
                random_unit_vector(&mut rng, &mut public[1..]);
            }
            Example::new(public, y)
        })
        .collect();
    Dataset::new(examples, k).expect("synthetic private values are in range")
}

/// Squared-loss gradient `(<w, a> - s_y) a / 1.5` with targets
/// `s_y = 2y/(k-1) - 1` and `||w|| <= 1/2`, so outputs stay in the unit ball.
pub struct SquaredLossGradient {
    w: Vec<f64>,
    k: usize,
}

impl LinearVectorQuery for SquaredLossGradient {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn eval(&self, public: &[f64], private: usize, out: &mut QueryBuffer) {
        let a = &public[1..];
        let target = 2.0 * private as f64 / (self.k - 1) as f64 - 1.0;
        let r = (pvmw_core::dot(&self.w, a) - target) / 1.5;
        for (o, ai) in out.dense_mut().iter_mut().zip(a) {
            *o = r * ai;
        }
    }
}

/// `s a_i`, independent of the private value.
pub struct PublicFeature {
    d: usize,
    sign: f64,
}

impl LinearVectorQuery for PublicFeature {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, public: &[f64], _private: usize, out: &mut QueryBuffer) {
        for (o, ai) in out.dense_mut().iter_mut().zip(&public[1..]) {
            *o = self.sign * ai;
        }
    }
}

/// Deterministic stream of queries for one run.
pub struct Workload {
    family: QueryFamily,
    n: usize,
    k: usize,
    d: usize,
    rng: ChaCha8Rng,
}

impl Workload {
    pub fn new(family: QueryFamily, n: usize, k: usize, d: usize, seed: u64) -> Self {
        Self {
            family,
            n,
            k,
            d,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, WORKLOAD_SALT)),
        }
    }

    pub fn next_query(&mut self) -> Box<dyn LinearVectorQuery> {
        match self.family {
            QueryFamily::RandomTable => {
                let (n, k, d) = (self.n, self.k, self.d);
                let mut table = vec![0.0; n * k * d];
                for chunk in table.chunks_exact_mut(d) {
                    random_unit_vector(&mut self.rng, chunk);
                }
                Box::new(TableQuery::new(d, k, table).expect("table has n k d entries"))
            }
            QueryFamily::Gradient => {
                let mut w = vec![0.0; self.d];
                random_unit_vector(&mut self.rng, &mut w);
                let r = 0.5 * self.rng.gen::<f64>();
                w.iter_mut().for_each(|x| *x *= r);
                Box::new(SquaredLossGradient { w, k: self.k })
            }
            QueryFamily::ConstantPublic => Box::new(PublicFeature {
                d: self.d,
                sign: self.rng.gen_range(-1.0..1.0),
            }),
        }
    }
}
