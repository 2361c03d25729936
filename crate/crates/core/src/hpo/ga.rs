//! Island-model genetic algorithm.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{Chromosome, Codec, Params};
use super::HpoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgaConfig {
    /// Total population `m` across islands.
    pub population: usize,
    /// Number of islands `N`; must divide `population`.
    pub islands: usize,
    /// Outer rounds `K1`, each ending in a migration.
    pub outer_iterations: usize,
    /// Generations per island per round, `K2`.
    pub inner_iterations: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    /// Per-bit flip probability; `None` means `1 / bit length`.
    pub mutation_prob: Option<f64>,
    pub migration_fraction: f64,
    pub seed: u64,
    /// Threads running islands; `None` means one per island. Results do not depend on it.
    pub workers: Option<usize>,
    /// Reuse fitness values for already evaluated hyperparameters.
    pub cache: bool,
}

impl Default for PgaConfig {
    fn default() -> Self {
        Self {
            population: 12,
            islands: 2,
            outer_iterations: 10,
            inner_iterations: 10,
            tournament_size: 3,
            crossover_prob: 0.9,
            mutation_prob: None,
            migration_fraction: 0.2,
            seed: 0,
            workers: None,
            cache: true,
        }
    }
}

impl PgaConfig {
    pub fn validate(&self) -> Result<(), HpoError> {
        let bad = |m: String| Err(HpoError::InvalidConfig(m));
        if self.population == 0 || self.islands == 0 || self.tournament_size == 0 {
            return bad("population, islands and tournament size must be at least 1".into());
        }
        if !self.population.is_multiple_of(self.islands) {
            return bad(format!(
                "population {} is not divisible by {} islands",
                self.population, self.islands
            ));
        }
        if self.tournament_size > self.island_size() {
            return bad(format!(
                "tournament size {} exceeds island size {}",
                self.tournament_size,
                self.island_size()
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob)
            || self
                .mutation_prob
                .is_some_and(|p| !(0.0..=1.0).contains(&p))
            || !(0.0..=1.0).contains(&self.migration_fraction)
        {
            return bad("probabilities and the migration fraction must lie in [0,1]".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Subpopulation size `n = m / N`.
    pub fn island_size(&self) -> usize {
        self.population / self.islands
    }

    pub fn mutation_prob_for(&self, bit_len: usize) -> f64 {
        self.mutation_prob.unwrap_or(if bit_len == 0 {
            0.0
        } else {
            1.0 / bit_len as f64
        })
    }

    /// `max(1, ⌊fraction · n⌋)`, never more than `n`.
    pub fn migration_count(&self) -> usize {
        let n = self.island_size();
        ((self.migration_fraction * n as f64).floor() as usize)
            .max(1)
            .min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub chromosome: Chromosome,
    /// Lower is better.
    pub fitness: f64,
    #[serde(with = "secs")]
    pub cost: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// One line of the exported trace: the island's best after a generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 is the initial evaluation; generation `g ≥ 1` is the `g`-th breeding step.
    pub generation: usize,
    pub island: usize,
    pub best_fitness: f64,
    pub params: Params,
}

/// Writes one JSON object per line.
pub fn trace_to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<TraceRecord>, HpoError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HpoError::InvalidConfig(e.to_string())))
        .collect()
}

/// Fitness function over decoded hyperparameters; `Err` carries a message.
pub trait FitnessFn: Fn(&Params) -> Result<f64, String> + Sync {}
impl<F: Fn(&Params) -> Result<f64, String> + Sync> FitnessFn for F {}

/// Memoizes fitness by decoded hyperparameters and counts real evaluations.
pub struct Evaluator<'f, F: FitnessFn> {
    f: &'f F,
    cache: Option<Mutex<HashMap<Params, (f64, Duration)>>>,
    evaluations: Mutex<usize>,
}

impl<'f, F: FitnessFn> Evaluator<'f, F> {
    pub fn new(f: &'f F, cache: bool) -> Self {
        Self {
            f,
            cache: cache.then(|| Mutex::new(HashMap::new())),
            evaluations: Mutex::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        *self.evaluations.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn evaluate(&self, chromosome: Chromosome) -> Result<FitnessRecord, HpoError> {
        if let Some(cache) = &self.cache {
            let hit = cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(&chromosome.decoded)
                .copied();
            if let Some((fitness, cost)) = hit {
                return Ok(FitnessRecord {
                    chromosome,
                    fitness,
                    cost,
                });
            }
        }
        let start = Instant::now();
        let fitness = (self.f)(&chromosome.decoded).map_err(|message| HpoError::Fitness {
            params: chromosome.decoded.clone(),
            message,
        })?;
        let cost = start.elapsed();
        if !(fitness >= 0.0) || !fitness.is_finite() {
            return Err(HpoError::Fitness {
                params: chromosome.decoded.clone(),
                message: format!("fitness {fitness} is not a finite nonnegative number"),
            });
        }
        *self.evaluations.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        if let Some(cache) = &self.cache {
            cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(chromosome.decoded.clone(), (fitness, cost));
        }
        Ok(FitnessRecord {
            chromosome,
            fitness,
            cost,
        })
    }
}

/// Index of the best record; ties go to the earlier one.
fn best_index(pop: &[FitnessRecord]) -> Option<usize> {
    (0..pop.len()).min_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)))
}

/// Samples `k` distinct entrants uniformly and returns the fittest.
pub fn tournament_select<'p, R: Rng>(
    pop: &'p [FitnessRecord],
    k: usize,
    rng: &mut R,
) -> Result<&'p FitnessRecord, HpoError> {
    if pop.is_empty() {
        return Err(HpoError::EmptyPopulation);
    }
    if k == 0 || k > pop.len() {
        return Err(HpoError::InvalidConfig(format!(
            "tournament size {k} for a population of {}",
            pop.len()
        )));
    }
    let entrants = sample(rng, pop.len(), k);
    let best = entrants
        .iter()
        .min_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)))
        .expect("k >= 1");
    Ok(&pop[best])
}

/// Uniform crossover (each position swapped with probability 0.5 when crossover fires)
/// followed by independent flip-bit mutation.
pub fn vary<R: Rng>(
    a: &[bool],
    b: &[bool],
    crossover_prob: f64,
    mutation_prob: f64,
    rng: &mut R,
) -> Result<(Vec<bool>, Vec<bool>), HpoError> {
    if a.len() != b.len() {
        return Err(HpoError::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut c, mut d) = (a.to_vec(), b.to_vec());
    if rng.random_bool(crossover_prob) {
        for i in 0..c.len() {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut c[i], &mut d[i]);
            }
        }
    }
    for bit in c.iter_mut().chain(d.iter_mut()) {
        if rng.random_bool(mutation_prob) {
            *bit = !*bit;
        }
    }
    Ok((c, d))
}

/// Runs `generations` breeding steps on one island.
///
/// Each step breeds `n` children by tournament selection and variation; a child that
/// duplicates a member or an earlier child is swapped for a random immigrant. Children then
/// replace the worst members they beat: the next island is the `n` best of parents and
/// children, distinct hyperparameters first. The incumbent best therefore always survives.
/// Returns the best fitness after each step.
pub fn evolve_subpopulation<R: Rng, F: FitnessFn>(
    subpop: &mut Vec<FitnessRecord>,
    evaluator: &Evaluator<'_, F>,
    codec: &Codec,
    generations: usize,
    cfg: &PgaConfig,
    rng: &mut R,
) -> Result<Vec<(f64, Params)>, HpoError> {
    if subpop.is_empty() {
        return Err(HpoError::EmptyPopulation);
    }
    let n = subpop.len();
    let k = cfg.tournament_size.min(n);
    let pm = cfg.mutation_prob_for(codec.bit_len());
    let mut bests = Vec::with_capacity(generations);
    for _ in 0..generations {
        let mut children = Vec::with_capacity(n + 1);
        while children.len() < n {
            let p1 = tournament_select(subpop, k, rng)?.chromosome.bits.clone();
            let p2 = tournament_select(subpop, k, rng)?.chromosome.bits.clone();
            let (c1, c2) = vary(&p1, &p2, cfg.crossover_prob, pm, rng)?;
            children.push(c1);
            if children.len() < n {
                children.push(c2);
            }
        }
        let mut seen: Vec<Params> = subpop
            .iter()
            .map(|r| r.chromosome.decoded.clone())
            .collect();
        let mut evaluated = Vec::with_capacity(n);
        for bits in children {
            let mut c = codec.decode(&bits)?;
            if seen.contains(&c.decoded) {
                // a clone adds nothing; a random immigrant keeps the island exploring
                c = codec.random(rng);
            }
            seen.push(c.decoded.clone());
            evaluated.push(evaluator.evaluate(c)?);
        }
        // parents first so that ties keep the incumbent; the sort is stable
        let mut pool: Vec<FitnessRecord> = std::mem::take(subpop);
        pool.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        pool.extend(evaluated);
        pool.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        let mut rest = Vec::new();
        for r in pool {
            if subpop.len() < n
                && !subpop
                    .iter()
                    .any(|m| m.chromosome.decoded == r.chromosome.decoded)
            {
                subpop.push(r);
            } else {
                rest.push(r);
            }
        }
        subpop.extend(rest.into_iter().take(n - subpop.len()));
        let b = best_index(subpop).expect("nonempty");
        bests.push((subpop[b].fitness, subpop[b].chromosome.decoded.clone()));
    }
    Ok(bests)
}

/// Ring exchange: island `i` sends copies of its `max(1, ⌊0.2·n⌋)` best members to island
/// `i + 1`, where they replace the worst members other than that island's best.
pub fn migrate(subpops: &mut [Vec<FitnessRecord>], cfg: &PgaConfig) {
    let islands = subpops.len();
    if islands < 2 {
        return;
    }
    let count = cfg.migration_count();
    let emigrants: Vec<Vec<FitnessRecord>> = subpops
        .iter()
        .map(|pop| {
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)));
            order.iter().take(count).map(|&i| pop[i].clone()).collect()
        })
        .collect();
    for (src, group) in emigrants.into_iter().enumerate() {
        let dst = &mut subpops[(src + 1) % islands];
        let keep = best_index(dst).expect("islands are nonempty");
        let mut order: Vec<usize> = (0..dst.len()).filter(|&i| i != keep).collect();
        // worst first; among equals the later member goes first
        order.sort_by(|&a, &b| dst[b].fitness.total_cmp(&dst[a].fitness).then(b.cmp(&a)));
        let mut slots = order.into_iter();
        for incoming in group {
            match slots.next() {
                Some(slot) => dst[slot] = incoming,
                None => {
                    // single-member island: only a strictly better migrant may replace it
                    if incoming.fitness < dst[keep].fitness {
                        dst[keep] = incoming;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaOutcome {
    /// Best individual ever evaluated.
    pub best: FitnessRecord,
    pub trace: Vec<TraceRecord>,
    /// Fitness calls actually made (cache hits excluded).
    pub evaluations: usize,
    pub final_subpops: Vec<Vec<FitnessRecord>>,
}

/// An aborted run: the failure plus the trace recorded up to it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct PgaFailure {
    pub error: HpoError,
    pub partial_trace: Vec<TraceRecord>,
}

fn island_rng(seed: u64, island: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(island as u64 + 1);
    rng
}

fn run_islands<T: Send>(
    workers: usize,
    islands: usize,
    task: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    let workers = workers.clamp(1, islands.max(1));
    let mut slots: Vec<Option<T>> = (0..islands).map(|_| None).collect();
    std::thread::scope(|s| {
        let task = &task;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..islands)
                        .step_by(workers)
                        .map(|i| (i, task(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, out) in h.join().expect("island worker panicked") {
                slots[i] = Some(out);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every island ran"))
        .collect()
}

fn record_best(
    trace: &mut Vec<TraceRecord>,
    generation: usize,
    island: usize,
    pop: &[FitnessRecord],
) {
    let b = best_index(pop).expect("nonempty");
    trace.push(TraceRecord {
        generation,
        island,
        best_fitness: pop[b].fitness,
        params: pop[b].chromosome.decoded.clone(),
    });
}

/// Island-model GA: `K1` rounds of concurrent `K2`-generation island evolution, each round
/// followed by ring migration. The trace is ordered by generation, then island.
pub fn run_pga<F: FitnessFn>(
    cfg: &PgaConfig,
    codec: &Codec,
    fitness: &F,
) -> Result<PgaOutcome, PgaFailure> {
    let fail = |error: HpoError, partial_trace: &[TraceRecord]| PgaFailure {
        error,
        partial_trace: partial_trace.to_vec(),
    };
    cfg.validate().map_err(|e| fail(e, &[]))?;
    let evaluator = Evaluator::new(fitness, cfg.cache);
    let workers = cfg.workers.unwrap_or(cfg.islands);
    let n = cfg.island_size();

    let rngs: Vec<Mutex<ChaCha8Rng>> = (0..cfg.islands)
        .map(|i| Mutex::new(island_rng(cfg.seed, i)))
        .collect();
    let init = run_islands(workers, cfg.islands, |i| {
        let mut rng = rngs[i].lock().unwrap_or_else(|e| e.into_inner());
        (0..n)
            .map(|_| evaluator.evaluate(codec.random(&mut *rng)))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut trace = Vec::new();
    let mut subpops = Vec::with_capacity(cfg.islands);
    for (i, pop) in init.into_iter().enumerate() {
        let pop = pop.map_err(|e| fail(e, &trace))?;
        record_best(&mut trace, 0, i, &pop);
        subpops.push(pop);
    }
    let mut best = {
        let all: Vec<&FitnessRecord> = subpops.iter().flatten().collect();
        let b = (0..all.len())
            .min_by(|&a, &b| all[a].fitness.total_cmp(&all[b].fitness).then(a.cmp(&b)))
            .expect("nonempty");
        all[b].clone()
    };

    for round in 0..cfg.outer_iterations {
        let pops: Vec<Mutex<Vec<FitnessRecord>>> = subpops.into_iter().map(Mutex::new).collect();
        let results = run_islands(workers, cfg.islands, |i| {
            let mut rng = rngs[i].lock().unwrap_or_else(|e| e.into_inner());
            let mut pop = pops[i].lock().unwrap_or_else(|e| e.into_inner());
            evolve_subpopulation(
                &mut pop,
                &evaluator,
                codec,
                cfg.inner_iterations,
                cfg,
                &mut *rng,
            )
        });
        subpops = pops
            .into_iter()
            .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
            .collect();
        let mut per_island = Vec::with_capacity(cfg.islands);
        let mut first_error = None;
        for r in results {
            match r {
                Ok(b) => per_island.push(b),
                Err(e) => {
                    first_error.get_or_insert(e);
                    per_island.push(Vec::new());
                }
            }
        }
        let base = round * cfg.inner_iterations;
        for g in 0..cfg.inner_iterations {
            for (i, bests) in per_island.iter().enumerate() {
                if let Some((fit, params)) = bests.get(g) {
                    trace.push(TraceRecord {
                        generation: base + g + 1,
                        island: i,
                        best_fitness: *fit,
                        params: params.clone(),
                    });
                }
            }
        }
        if let Some(e) = first_error {
            return Err(fail(e, &trace));
        }
        for pop in &subpops {
            let b = best_index(pop).expect("nonempty");
            if pop[b].fitness < best.fitness {
                best = pop[b].clone();
            }
        }
        migrate(&mut subpops, cfg);
    }
    Ok(PgaOutcome {
        best,
        trace,
        evaluations: evaluator.evaluations(),
        final_subpops: subpops,
    })
}
