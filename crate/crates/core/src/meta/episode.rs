use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// One N-way episode as record indices. Slots are class-major: the
/// support of slot `j` is `support[j*S..(j+1)*S]`, likewise for queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeBatch {
    pub n_way: usize,
    pub s_shot: usize,
    pub q_query: usize,
    /// Class id behind each slot.
    pub classes: Vec<usize>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

impl EpisodeBatch {
    /// Slot index of every support record.
    pub fn support_slots(&self) -> Vec<usize> {
        (0..self.n_way)
            .flat_map(|j| std::iter::repeat_n(j, self.s_shot))
            .collect()
    }

    /// Slot index of every query record.
    pub fn query_slots(&self) -> Vec<usize> {
        (0..self.n_way)
            .flat_map(|j| std::iter::repeat_n(j, self.q_query))
            .collect()
    }
}

/// Draw an episode from `pool`, where `pool[c]` lists the records of
/// class `c`. Classes are chosen uniformly without replacement among those
/// with at least S+Q records, then S+Q distinct records per class.
pub fn sample_episode<R: Rng>(
    pool: &[Vec<usize>],
    n_way: usize,
    s_shot: usize,
    q_query: usize,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if n_way == 0 || s_shot == 0 || q_query == 0 {
        return Err(Error::InvalidConfig(
            "n_way, s_shot and q_query must be positive".into(),
        ));
    }
    let need = s_shot + q_query;
    let eligible: Vec<usize> = (0..pool.len()).filter(|&c| pool[c].len() >= need).collect();
    if eligible.len() < n_way {
        return Err(Error::InsufficientData(format!(
            "{n_way}-way episodes need {n_way} classes with {need} examples, found {}",
            eligible.len()
        )));
    }
    let classes: Vec<usize> = sample(rng, eligible.len(), n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut support = Vec::with_capacity(n_way * s_shot);
    let mut query = Vec::with_capacity(n_way * q_query);
    for &c in &classes {
        let picked = sample(rng, pool[c].len(), need).into_vec();
        support.extend(picked[..s_shot].iter().map(|&i| pool[c][i]));
        query.extend(picked[s_shot..].iter().map(|&i| pool[c][i]));
    }
    Ok(EpisodeBatch {
        n_way,
        s_shot,
        q_query,
        classes,
        support,
        query,
    })
}
