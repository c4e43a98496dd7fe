//! Seeded synthetic corpora with known generating distributions.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::events::Term;
use crate::tasks::pp::PpRecord;
use crate::tasks::sync::DependencyPair;

fn term(s: String) -> Term {
    Term::new(s).expect("generated symbols are valid terms")
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("weights are positive")
}

/// Parameters of the synthetic PP-attachment source. Each word carries an
/// additive logit toward noun attachment; prepositions dominate.
#[derive(Clone, Debug)]
pub struct PpSource {
    verbs: Vec<f64>,
    nouns: Vec<f64>,
    objects: Vec<f64>,
    preps: Vec<f64>,
}

impl PpSource {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        PpSource {
            verbs: draw(20, 1.5),
            nouns: draw(40, 1.5),
            objects: draw(40, 0.5),
            preps: draw(8, 3.0),
        }
    }

    /// Probability of noun attachment.
    pub fn noun_prob(&self, v: usize, n1: usize, p: usize, n2: usize) -> f64 {
        let z = self.verbs[v] + self.nouns[n1] + self.preps[p] + self.objects[n2];
        1.0 / (1.0 + (-z).exp())
    }

    pub fn sample(&self, rng: &mut impl Rng, count: usize) -> Vec<PpRecord> {
        let (dv, dn, dp) = (zipf(self.verbs.len()), zipf(self.nouns.len()), zipf(self.preps.len()));
        (0..count)
            .map(|_| {
                let (v, n1, p, n2) = (dv.sample(rng), dn.sample(rng), dp.sample(rng), dn.sample(rng));
                let label = u8::from(rng.gen_bool(self.noun_prob(v, n1, p, n2)));
                PpRecord {
                    v: term(format!("v{v}")),
                    n1: term(format!("n{n1}")),
                    p: term(format!("p{p}")),
                    n2: term(format!("n{n2}")),
                    label,
                }
            })
            .collect()
    }
}

/// `size` PP records from a source drawn with `seed`.
pub fn generate_pp(seed: u64, size: usize) -> Vec<PpRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = PpSource::new(&mut rng);
    source.sample(&mut rng, size)
}

/// `size` bilingual dependency pairs. Language-2 words translate their
/// language-1 counterparts, with 10% lexical noise.
pub fn generate_sync(seed: u64, size: usize) -> Vec<DependencyPair> {
    const HEADS: usize = 15;
    const WORDS: usize = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = zipf(HEADS);
    let prefs: Vec<WeightedIndex<f64>> = (0..HEADS)
        .map(|_| WeightedIndex::new((0..WORDS).map(|_| rng.gen_range(0.05..1.0f64).powi(3))).unwrap())
        .collect();
    let translate = |rng: &mut ChaCha8Rng, i: usize| {
        if rng.gen_bool(0.9) {
            i
        } else {
            rng.gen_range(0..WORDS)
        }
    };
    (0..size)
        .map(|_| {
            let h = heads.sample(&mut rng);
            let c = prefs[h].sample(&mut rng);
            let (h2, c2) = (translate(&mut rng, h), translate(&mut rng, c));
            DependencyPair {
                parent: [term(format!("h{h}")), term(format!("g{h2}"))],
                child: [term(format!("e{c}")), term(format!("f{c2}"))],
            }
        })
        .collect()
}

/// A token stream from a random first-order Markov chain over `vocab`
/// symbols `t0..`.
pub fn generate_tokens(seed: u64, size: usize, vocab: usize) -> Vec<Term> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<WeightedIndex<f64>> = (0..vocab)
        .map(|_| WeightedIndex::new((0..vocab).map(|_| rng.gen_range(0.0..1.0f64).powi(2) + 0.01)).unwrap())
        .collect();
    let mut cur = rng.gen_range(0..vocab);
    (0..size)
        .map(|_| {
            cur = rows[cur].sample(&mut rng);
            term(format!("t{cur}"))
        })
        .collect()
}
