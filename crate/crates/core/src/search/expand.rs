use std::sync::Arc;

use super::{Beam, Candidate, CandidatePool, SamplerState, SearchConfig, SearchError};
use crate::exec::Executor;
use crate::lm::{
    choose_token, GenerationEvent, Gate, ModelContext, ModelError, Prediction, SamplerSettings,
    SequenceModel, StepRequest, StopReason, TokenId,
};
use crate::prob;
use crate::search::CertainDecoding;
use crate::seed::{branch_point_key, lane_seed, token_rng, StreamKey};

/// Position of the first event whose entropy exceeds `tau`.
pub fn detect_first_exceedance(events: &[GenerationEvent], tau: f64) -> Option<usize> {
    events.iter().find(|e| e.entropy() > tau).map(|e| e.position)
}

fn first_gated(events: &[GenerationEvent], gate: Gate) -> Option<usize> {
    events
        .iter()
        .position(|e| gate.fires(e.position, e.entropy()))
}

/// Continuations produced by one rollback-and-branch.
#[derive(Debug, Clone)]
pub struct Branching {
    /// Per branch: events of the whole step (shared prefix included) and
    /// the stop reason.
    pub branches: Vec<(Vec<GenerationEvent>, StopReason)>,
    pub model_calls: usize,
    pub tokens_generated: usize,
}

/// The `width` tokens placed at a branch point: distinct draws (without
/// replacement) at `temperature`, then independent draws once the support
/// is exhausted.
pub(crate) fn branch_tokens(
    prediction: &Prediction,
    width: usize,
    temperature: f64,
    lane: u64,
    step: usize,
    position: usize,
) -> Result<Vec<TokenId>, ModelError> {
    let dist = prob::apply_temperature(&prediction.sampling_dist()?, temperature)?;
    let mut rng = token_rng(branch_point_key(lane, step, position));
    let distinct = prob::sample_distinct(&dist, width, &mut rng);
    Ok((0..width)
        .map(|j| {
            let index = distinct.get(j).copied().unwrap_or_else(|| {
                prob::sample(&dist, &mut StreamKey::new(lane, step, j).at(position))
            });
            prediction.token_at(index)
        })
        .collect())
}

/// Truncates a partial step to `prefix` (tokens `[0, t*)`) and generates
/// `width` continuations from there. Branch `j` takes the `j`-th branch
/// token at `t*` and then samples at the branch temperature from stream
/// `(lane, step, j)` until the step ends.
#[allow(clippy::too_many_arguments)]
pub fn rollback_and_branch<M: SequenceModel + ?Sized>(
    model: &M,
    ctx: &ModelContext,
    prefix: &[GenerationEvent],
    t_star: usize,
    at_t_star: &Arc<Prediction>,
    width: usize,
    cfg: &SearchConfig,
    lane: u64,
    step: usize,
) -> Result<Branching, ModelError> {
    debug_assert_eq!(prefix.len(), t_star);
    let rule = &cfg.step_rule;
    let sampler = SamplerSettings::sampled(cfg.branch_temperature);
    let mut base = ctx.clone();
    let mut prefix_text = String::new();
    for e in prefix {
        base.push(e.token_id, &e.text);
        prefix_text.push_str(&e.text);
    }
    let tokens = branch_tokens(at_t_star, width, cfg.branch_temperature, lane, step, t_star)?;
    let mut out = Branching {
        branches: Vec::with_capacity(width),
        model_calls: 0,
        tokens_generated: 0,
    };
    for (j, token_id) in tokens.into_iter().enumerate() {
        let text = model.token_text(token_id)?;
        let mut bctx = base.clone();
        bctx.push(token_id, &text);
        let step_text = format!("{prefix_text}{text}");
        let mut events = prefix.to_vec();
        events.push(GenerationEvent {
            token_id,
            text,
            position: t_star,
            prediction: Arc::clone(at_t_star),
        });
        out.tokens_generated += 1;
        let stop = if let Some(reason) = rule.boundary(&step_text) {
            reason
        } else if t_star + 1 >= rule.max_step_tokens {
            StopReason::MaxTokens
        } else {
            let req = StepRequest {
                ctx: &bctx,
                rule,
                sampler,
                stream: StreamKey::new(lane, step, j),
                start_position: t_star + 1,
                step_prefix: &step_text,
                gate: None,
            };
            let rest = model.generate_step(&req)?;
            out.model_calls += rest.model_calls;
            out.tokens_generated += rest.events.len();
            events.extend(rest.events);
            rest.stop_reason
        };
        out.branches.push((events, stop));
    }
    Ok(out)
}

fn branch_states(len: usize, t_star: usize) -> Vec<SamplerState> {
    (0..len)
        .map(|p| match p.cmp(&t_star) {
            std::cmp::Ordering::Less => SamplerState::Certain,
            std::cmp::Ordering::Equal => SamplerState::BranchPoint,
            std::cmp::Ordering::Greater => SamplerState::Uncertain,
        })
        .collect()
}

fn certain_sampler(cfg: &SearchConfig) -> SamplerSettings {
    SamplerSettings {
        temperature: cfg.base_temperature,
        greedy: cfg.certain_decoding == CertainDecoding::Greedy,
    }
}

/// Per-beam output of an expansion.
struct Expansion {
    candidates: Vec<Candidate>,
    certain: usize,
    uncertain: usize,
    model_calls: usize,
    tokens_generated: usize,
}

fn expand_beam<M: SequenceModel + ?Sized>(
    model: &M,
    beam: &Beam,
    index: usize,
    cfg: &SearchConfig,
    step: usize,
    fan_out: usize,
) -> Result<Expansion, ModelError> {
    let lane = lane_seed(cfg.seed, beam.lane);
    let gate = Gate {
        tau: cfg.tau,
        first_token_only: cfg.gate_first_token_only,
    };
    let sampler = certain_sampler(cfg);
    let req = StepRequest {
        gate: Some(gate),
        ..StepRequest::new(&beam.ctx, &cfg.step_rule, sampler, StreamKey::new(lane, step, 0))
    };
    let first = model.generate_step(&req)?;
    let mut exp = Expansion {
        candidates: Vec::new(),
        certain: 0,
        uncertain: 0,
        model_calls: first.model_calls,
        tokens_generated: first.events.len(),
    };
    // Models that generate whole steps remotely ignore the gate; find the
    // exceedance afterwards.
    let hit = match &first.gate_hit {
        Some(prediction) => Some((first.events.len(), Arc::clone(prediction))),
        None => first_gated(&first.events, gate)
            .map(|t| (t, Arc::clone(&first.events[t].prediction))),
    };
    match hit {
        Some((t_star, prediction)) => {
            let b = rollback_and_branch(
                model,
                &beam.ctx,
                &first.events[..t_star],
                t_star,
                &prediction,
                cfg.beam_width,
                cfg,
                lane,
                step,
            )?;
            exp.uncertain = 1;
            exp.model_calls += b.model_calls;
            exp.tokens_generated += b.tokens_generated;
            for (j, (events, stop_reason)) in b.branches.into_iter().enumerate() {
                exp.candidates.push(Candidate {
                    source_beam: index,
                    branch: j,
                    lane: beam.lane,
                    states: branch_states(events.len(), t_star),
                    events,
                    stop_reason,
                    t_star: Some(t_star),
                    passthrough: false,
                });
            }
        }
        None => {
            exp.certain = fan_out;
            exp.candidates.push(Candidate {
                source_beam: index,
                branch: 0,
                lane: beam.lane,
                states: vec![SamplerState::Certain; first.events.len()],
                events: first.events,
                stop_reason: first.stop_reason,
                t_star: None,
                passthrough: false,
            });
            // A certain root seeds the other lanes with ordinary samples.
            for j in 1..fan_out {
                let stream = StreamKey::new(lane_seed(cfg.seed, j), step, 0);
                let out = model.generate_step(&StepRequest::new(
                    &beam.ctx,
                    &cfg.step_rule,
                    sampler,
                    stream,
                ))?;
                exp.model_calls += out.model_calls;
                exp.tokens_generated += out.events.len();
                exp.candidates.push(Candidate {
                    source_beam: index,
                    branch: j,
                    lane: j,
                    states: vec![SamplerState::Certain; out.events.len()],
                    events: out.events,
                    stop_reason: out.stop_reason,
                    t_star: None,
                    passthrough: false,
                });
            }
        }
    }
    Ok(exp)
}

fn collect(
    beams: &[Beam],
    results: Vec<Result<Option<Expansion>, ModelError>>,
    step: usize,
) -> Result<CandidatePool, SearchError> {
    let mut pool = CandidatePool::default();
    for (index, (beam, result)) in beams.iter().zip(results).enumerate() {
        match result.map_err(|source| SearchError::Model {
            step,
            beam: index,
            source,
        })? {
            Some(exp) => {
                pool.certain += exp.certain;
                pool.uncertain += exp.uncertain;
                pool.model_calls += exp.model_calls;
                pool.tokens_generated += exp.tokens_generated;
                pool.generated += exp.candidates.len();
                pool.entries.extend(exp.candidates);
            }
            None => pool.entries.push(Candidate::passthrough(index, beam.lane)),
        }
    }
    Ok(pool)
}

/// Expands every live beam by one step with entropy gating; finished beams
/// pass through unchanged.
///
/// A beam whose step stays at or below `tau` contributes one candidate. A
/// beam that exceeds it is rolled back to the first exceedance and branched
/// `W` ways. On the first step, a certain lone root instead contributes `K`
/// independent samples so that `K` beams exist afterwards.
pub fn expand_step<M: SequenceModel + ?Sized>(
    beams: &[Beam],
    cfg: &SearchConfig,
    model: &M,
    step: usize,
    exec: &Executor,
) -> Result<CandidatePool, SearchError> {
    let fan_out = if beams.len() == 1 && beams[0].steps.is_empty() {
        cfg.beam_size
    } else {
        1
    };
    let indexed: Vec<(usize, &Beam)> = beams.iter().enumerate().collect();
    let results = exec.map(&indexed, |(i, beam)| {
        if beam.finished {
            Ok(None)
        } else {
            expand_beam(model, beam, *i, cfg, step, fan_out).map(Some)
        }
    });
    collect(beams, results, step)
}

/// Beam-search expansion of one beam: `W` continuations per beam at every
/// step. Tokens are decoded until the first position with any uncertainty;
/// there the `W` candidates take distinct draws and continue independently
/// at the branch temperature.
pub fn beam_search_expand<M: SequenceModel + ?Sized>(
    model: &M,
    beam: &Beam,
    index: usize,
    cfg: &SearchConfig,
    step: usize,
) -> Result<Vec<Candidate>, ModelError> {
    Ok(beam_search_beam(model, beam, index, cfg, step)?.candidates)
}

fn beam_search_beam<M: SequenceModel + ?Sized>(
    model: &M,
    beam: &Beam,
    index: usize,
    cfg: &SearchConfig,
    step: usize,
) -> Result<Expansion, ModelError> {
    let rule = &cfg.step_rule;
    let width = cfg.beam_width;
    let lane = lane_seed(cfg.seed, beam.lane);
    let mut exp = Expansion {
        candidates: Vec::with_capacity(width),
        certain: 0,
        uncertain: 1,
        model_calls: 0,
        tokens_generated: 0,
    };
    let mut ctx = beam.ctx.clone();
    let mut prefix: Vec<GenerationEvent> = Vec::new();
    let mut text = String::new();
    let sampler = certain_sampler(cfg);
    let mut stop = None;
    let mut fork = None;
    if rule.is_terminal(ctx.text()) {
        stop = Some(StopReason::Terminal);
    }
    while stop.is_none() && fork.is_none() {
        let position = prefix.len();
        if position >= rule.max_step_tokens {
            stop = Some(StopReason::MaxTokens);
            break;
        }
        let prediction = Arc::new(model.next_distribution(&ctx)?);
        exp.model_calls += 1;
        if prediction.entropy() > 0.0 {
            fork = Some(prediction);
            break;
        }
        let token_id = choose_token(&prediction, sampler, &mut StreamKey::new(lane, step, 0).at(position))?;
        let piece = model.token_text(token_id)?;
        ctx.push(token_id, &piece);
        text.push_str(&piece);
        prefix.push(GenerationEvent {
            token_id,
            text: piece,
            position,
            prediction,
        });
        exp.tokens_generated += 1;
        stop = rule.boundary(&text);
    }
    let Some(at_fork) = fork else {
        // No uncertainty anywhere in the step: all W candidates coincide.
        let stop = stop.expect("loop ends at a fork or a stop");
        for j in 0..width {
            exp.candidates.push(Candidate {
                source_beam: index,
                branch: j,
                lane: beam.lane,
                states: vec![SamplerState::Certain; prefix.len()],
                events: prefix.clone(),
                stop_reason: stop,
                t_star: None,
                passthrough: false,
            });
        }
        return Ok(exp);
    };
    let t_star = prefix.len();
    let tokens = branch_tokens(&at_fork, width, cfg.branch_temperature, lane, step, t_star)?;
    let branch = SamplerSettings::sampled(cfg.branch_temperature);
    for (j, first) in tokens.into_iter().enumerate() {
        let stream = StreamKey::new(lane, step, j);
        let mut ctx = ctx.clone();
        let mut text = text.clone();
        let mut events = prefix.clone();
        let mut token_id = first;
        let mut prediction = Arc::clone(&at_fork);
        let stop = loop {
            let position = events.len();
            let piece = model.token_text(token_id)?;
            ctx.push(token_id, &piece);
            text.push_str(&piece);
            events.push(GenerationEvent {
                token_id,
                text: piece,
                position,
                prediction,
            });
            exp.tokens_generated += 1;
            if let Some(reason) = rule.boundary(&text) {
                break reason;
            }
            if position + 1 >= rule.max_step_tokens {
                break StopReason::MaxTokens;
            }
            prediction = Arc::new(model.next_distribution(&ctx)?);
            exp.model_calls += 1;
            token_id = choose_token(&prediction, branch, &mut stream.at(position + 1))?;
        };
        exp.candidates.push(Candidate {
            source_beam: index,
            branch: j,
            lane: beam.lane,
            states: branch_states(events.len(), t_star),
            events,
            stop_reason: stop,
            t_star: Some(t_star),
            passthrough: false,
        });
    }
    Ok(exp)
}

/// Beam-search counterpart of [`expand_step`].
pub(crate) fn beam_search_step<M: SequenceModel + ?Sized>(
    beams: &[Beam],
    cfg: &SearchConfig,
    model: &M,
    step: usize,
    exec: &Executor,
) -> Result<CandidatePool, SearchError> {
    let indexed: Vec<(usize, &Beam)> = beams.iter().enumerate().collect();
    let results = exec.map(&indexed, |(i, beam)| {
        if beam.finished {
            Ok(None)
        } else {
            beam_search_beam(model, beam, *i, cfg, step).map(Some)
        }
    });
    collect(beams, results, step)
}
