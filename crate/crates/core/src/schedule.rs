//! Barrier communication schedules.
//!
//! A [`Schedule`] lists, for one rank, the rounds of a barrier algorithm. Round
//! `r`'s sends may be issued only once every await of rounds `0..r` has been
//! satisfied; the barrier is complete when every await is satisfied.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::Rank;

pub const DEFAULT_GB_DEGREE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlgorithmKind {
    GatherBroadcast { degree: usize },
    PairwiseExchange,
    Dissemination,
}

impl AlgorithmKind {
    /// Short name used in CSV output and on the command line.
    pub fn short_name(&self) -> String {
        match self {
            AlgorithmKind::GatherBroadcast { degree } if *degree == DEFAULT_GB_DEGREE => "gb".to_string(),
            AlgorithmKind::GatherBroadcast { degree } => format!("gb{degree}"),
            AlgorithmKind::PairwiseExchange => "pe".to_string(),
            AlgorithmKind::Dissemination => "ds".to_string(),
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = ScheduleError;

    /// Accepts `ds`, `pe`, `gb` and `gb<degree>` (e.g. `gb4`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ds" | "dissemination" => Ok(AlgorithmKind::Dissemination),
            "pe" | "pairwise" | "pairwise-exchange" => Ok(AlgorithmKind::PairwiseExchange),
            "gb" | "gather-broadcast" => Ok(AlgorithmKind::GatherBroadcast { degree: DEFAULT_GB_DEGREE }),
            other => match other.strip_prefix("gb").map(str::parse::<usize>) {
                Some(Ok(degree)) if degree >= 2 => Ok(AlgorithmKind::GatherBroadcast { degree }),
                Some(Ok(degree)) => Err(ScheduleError::BadDegree(degree)),
                _ => Err(ScheduleError::UnknownAlgorithm(s.to_string())),
            },
        }
    }
}

impl TryFrom<String> for AlgorithmKind {
    type Error = ScheduleError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AlgorithmKind> for String {
    fn from(a: AlgorithmKind) -> String {
        a.short_name()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("gather-broadcast degree must be >= 2, got {0}")]
    BadDegree(usize),
    #[error("rank {me} out of range for {n} ranks")]
    RankOutOfRange { me: Rank, n: usize },
    #[error("a barrier needs at least one rank")]
    Empty,
    #[error("unknown algorithm `{0}` (expected ds, pe, gb or gb<degree>)")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub send_to: Vec<Rank>,
    pub await_from: Vec<Rank>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub n: usize,
    pub me: Rank,
    pub rounds: Vec<Round>,
}

impl Schedule {
    pub fn total_sends(&self) -> usize {
        self.rounds.iter().map(|r| r.send_to.len()).sum()
    }

    pub fn total_awaits(&self) -> usize {
        self.rounds.iter().map(|r| r.await_from.len()).sum()
    }
}

/// Smallest `k` with `base^k >= n`.
pub fn ceil_log(base: usize, n: usize) -> usize {
    assert!(base >= 2 && n >= 1);
    let (mut k, mut p) = (0, 1usize);
    while p < n {
        p = p.saturating_mul(base);
        k += 1;
    }
    k
}

fn floor_log2(n: usize) -> usize {
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

pub fn num_steps(alg: AlgorithmKind, n: usize) -> usize {
    assert!(n >= 1, "num_steps needs n >= 1");
    match alg {
        AlgorithmKind::Dissemination => ceil_log(2, n),
        AlgorithmKind::PairwiseExchange if n.is_power_of_two() => floor_log2(n),
        AlgorithmKind::PairwiseExchange => floor_log2(n) + 2,
        AlgorithmKind::GatherBroadcast { degree } => 2 * ceil_log(degree, n),
    }
}

pub fn build_schedule(alg: AlgorithmKind, n: usize, me: Rank) -> Result<Schedule, ScheduleError> {
    if n == 0 {
        return Err(ScheduleError::Empty);
    }
    if me >= n {
        return Err(ScheduleError::RankOutOfRange { me, n });
    }
    let rounds = match alg {
        AlgorithmKind::Dissemination => dissemination(n, me),
        AlgorithmKind::PairwiseExchange => pairwise_exchange(n, me),
        AlgorithmKind::GatherBroadcast { degree } if degree < 2 => return Err(ScheduleError::BadDegree(degree)),
        AlgorithmKind::GatherBroadcast { degree } => gather_broadcast(n, me, degree),
    };
    Ok(Schedule { n, me, rounds })
}

pub fn build_all(alg: AlgorithmKind, n: usize) -> Result<Vec<Schedule>, ScheduleError> {
    (0..n).map(|me| build_schedule(alg, n, me)).collect()
}

fn dissemination(n: usize, me: Rank) -> Vec<Round> {
    (0..ceil_log(2, n))
        .map(|m| {
            let dist = 1usize << m;
            Round { send_to: vec![(me + dist) % n], await_from: vec![(me + n - dist) % n] }
        })
        .collect()
}

fn pairwise_exchange(n: usize, me: Rank) -> Vec<Round> {
    if n == 1 {
        return Vec::new();
    }
    let steps = floor_log2(n);
    let exchange = |m: usize| {
        let partner = me ^ (1 << m);
        Round { send_to: vec![partner], await_from: vec![partner] }
    };
    if n.is_power_of_two() {
        return (0..steps).map(exchange).collect();
    }
    // M is the largest power of two below n; ranks >= M pair with me - M.
    let big = 1usize << steps;
    let mut rounds = Vec::with_capacity(steps + 2);
    if me >= big {
        rounds.push(Round { send_to: vec![me - big], ..Round::default() });
        rounds.extend((0..steps).map(|_| Round::default()));
        rounds.push(Round { await_from: vec![me - big], ..Round::default() });
    } else {
        let extra = (me + big < n).then_some(me + big);
        rounds.push(Round { await_from: extra.into_iter().collect(), ..Round::default() });
        rounds.extend((0..steps).map(exchange));
        rounds.push(Round { send_to: extra.into_iter().collect(), ..Round::default() });
    }
    rounds
}

fn gather_broadcast(n: usize, me: Rank, degree: usize) -> Vec<Round> {
    let levels = ceil_log(degree, n);
    let mut rounds = vec![Round::default(); 2 * levels];
    if n == 1 {
        return rounds;
    }
    let depth = |mut r: usize| {
        let mut d = 0;
        while r != 0 {
            r = (r - 1) / degree;
            d += 1;
        }
        d
    };
    let children: Vec<Rank> = (degree * me + 1..=degree * me + degree).filter(|&c| c < n).collect();
    let k = depth(me);
    // A rank at depth k reports to its parent in gather round levels - k and
    // hears back in broadcast round levels + k - 1.
    if !children.is_empty() {
        rounds[levels - k - 1].await_from = children.clone();
        rounds[levels + k].send_to = children;
    }
    if me != 0 {
        let parent = (me - 1) / degree;
        rounds[levels - k].send_to.push(parent);
        rounds[levels + k - 1].await_from.push(parent);
    }
    rounds
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    InconsistentGroup,
    SelfSend,
    DanglingSend,
    DanglingAwait,
    Deadlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleViolation {
    pub kind: ViolationKind,
    pub round: usize,
    pub sender: Rank,
    pub receiver: Rank,
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} in round {}: {} -> {}", self.kind, self.round, self.sender, self.receiver)
    }
}

/// Checks one-to-one send/await matching per round, then executes the
/// schedules asynchronously to prove every rank can finish.
pub fn validate_schedules(all: &[Schedule]) -> Result<(), ScheduleViolation> {
    let n = all.len();
    let bad_group = |round| ScheduleViolation { kind: ViolationKind::InconsistentGroup, round, sender: 0, receiver: 0 };
    for (i, s) in all.iter().enumerate() {
        if s.n != n || s.me != i {
            return Err(bad_group(0));
        }
    }
    // (round, sender, receiver) -> sends minus awaits
    let mut balance: BTreeMap<(usize, Rank, Rank), i64> = BTreeMap::new();
    for s in all {
        for (r, round) in s.rounds.iter().enumerate() {
            for &dst in &round.send_to {
                if dst == s.me {
                    return Err(ScheduleViolation { kind: ViolationKind::SelfSend, round: r, sender: s.me, receiver: dst });
                }
                if dst >= n {
                    return Err(bad_group(r));
                }
                *balance.entry((r, s.me, dst)).or_default() += 1;
            }
            for &src in &round.await_from {
                if src >= n {
                    return Err(bad_group(r));
                }
                *balance.entry((r, src, s.me)).or_default() -= 1;
            }
        }
    }
    if let Some((&(round, sender, receiver), &b)) = balance.iter().find(|(_, &b)| b != 0) {
        let kind = if b > 0 { ViolationKind::DanglingSend } else { ViolationKind::DanglingAwait };
        return Err(ScheduleViolation { kind, round, sender, receiver });
    }

    // Asynchronous execution to a fixpoint.
    let mut trackers: Vec<RoundTracker> = all.iter().map(|s| RoundTracker::new(s, 0)).collect();
    let mut inflight: Vec<(usize, Rank, Rank)> = Vec::new();
    loop {
        let mut progressed = false;
        for (i, t) in trackers.iter_mut().enumerate() {
            for r in t.advance(&all[i]) {
                progressed = true;
                inflight.extend(all[i].rounds[r].send_to.iter().map(|&d| (r, i, d)));
            }
        }
        for (r, src, dst) in inflight.drain(..) {
            progressed = true;
            trackers[dst].record(&all[dst], r, src).map_err(|_| ScheduleViolation {
                kind: ViolationKind::DanglingSend,
                round: r,
                sender: src,
                receiver: dst,
            })?;
        }
        if !progressed {
            break;
        }
    }
    for (i, t) in trackers.iter().enumerate() {
        if !t.is_complete() {
            let (round, sender) = t.missing(&all[i]).first().copied().unwrap_or((t.sent_rounds(), i));
            return Err(ScheduleViolation { kind: ViolationKind::Deadlock, round, sender, receiver: i });
        }
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no await for a round-{round} message from rank {src}")]
pub struct UnexpectedMessage {
    pub round: usize,
    pub src: Rank,
}

/// Progress of one rank through one barrier instance: a bit per expected
/// (round, peer) arrival plus the number of rounds whose sends are issued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTracker {
    seq: u64,
    bits: Vec<bool>,
    offsets: Vec<usize>,
    missing_in_round: Vec<usize>,
    sent_rounds: usize,
}

impl RoundTracker {
    pub fn new(schedule: &Schedule, seq: u64) -> Self {
        let mut offsets = Vec::with_capacity(schedule.rounds.len() + 1);
        let mut acc = 0;
        for r in &schedule.rounds {
            offsets.push(acc);
            acc += r.await_from.len();
        }
        offsets.push(acc);
        RoundTracker {
            seq,
            bits: vec![false; acc],
            offsets,
            missing_in_round: schedule.rounds.iter().map(|r| r.await_from.len()).collect(),
            sent_rounds: 0,
        }
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn bit_count(&self) -> usize {
        self.bits.len()
    }

    pub fn sent_rounds(&self) -> usize {
        self.sent_rounds
    }

    /// Records an arrival. Returns `Ok(false)` for a duplicate.
    pub fn record(&mut self, schedule: &Schedule, round: usize, src: Rank) -> Result<bool, UnexpectedMessage> {
        let idx = schedule
            .rounds
            .get(round)
            .and_then(|r| r.await_from.iter().position(|&p| p == src))
            .map(|pos| self.offsets[round] + pos)
            .ok_or(UnexpectedMessage { round, src })?;
        if self.bits[idx] {
            return Ok(false);
        }
        self.bits[idx] = true;
        self.missing_in_round[round] -= 1;
        Ok(true)
    }

    pub fn has(&self, schedule: &Schedule, round: usize, src: Rank) -> bool {
        schedule
            .rounds
            .get(round)
            .and_then(|r| r.await_from.iter().position(|&p| p == src))
            .is_some_and(|pos| self.bits[self.offsets[round] + pos])
    }

    /// Marks every round whose sends are now enabled as sent and returns them.
    pub fn advance(&mut self, schedule: &Schedule) -> std::ops::Range<usize> {
        let start = self.sent_rounds;
        while self.sent_rounds < schedule.rounds.len()
            && (0..self.sent_rounds).all(|r| self.missing_in_round[r] == 0)
        {
            self.sent_rounds += 1;
        }
        start..self.sent_rounds
    }

    pub fn is_complete(&self) -> bool {
        self.sent_rounds == self.missing_in_round.len() && self.missing_in_round.iter().all(|&m| m == 0)
    }

    /// Unset bits as (round, peer), in round order.
    pub fn missing(&self, schedule: &Schedule) -> Vec<(usize, Rank)> {
        schedule
            .rounds
            .iter()
            .enumerate()
            .flat_map(|(r, round)| {
                round
                    .await_from
                    .iter()
                    .enumerate()
                    .filter(move |(pos, _)| !self.bits[self.offsets[r] + pos])
                    .map(move |(_, &p)| (r, p))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DS: AlgorithmKind = AlgorithmKind::Dissemination;
    const PE: AlgorithmKind = AlgorithmKind::PairwiseExchange;
    const GB: AlgorithmKind = AlgorithmKind::GatherBroadcast { degree: 2 };

    #[test]
    fn ds_round_targets() {
        let s = build_schedule(DS, 8, 3).unwrap();
        assert_eq!(s.rounds.len(), 3);
        assert_eq!(s.rounds[1].send_to, vec![5]);
        assert_eq!(s.rounds[1].await_from, vec![1]);
        assert!(s.rounds.iter().all(|r| r.send_to.len() == 1 && r.await_from.len() == 1));
    }

    #[test]
    fn pe_partner_is_xor() {
        let s = build_schedule(PE, 8, 3).unwrap();
        assert_eq!(s.rounds[1].send_to, vec![1]);
        assert_eq!(s.rounds[1].await_from, vec![1]);
    }

    #[test]
    fn pe_non_power_of_two_extra_rank() {
        let s = build_schedule(PE, 5, 4).unwrap();
        assert_eq!(s.rounds.len(), 4);
        assert_eq!(s.rounds[0].send_to, vec![0]);
        assert_eq!(s.rounds.last().unwrap().await_from, vec![0]);
        assert!(s.rounds[1..3].iter().all(|r| r.send_to.is_empty() && r.await_from.is_empty()));
        let zero = build_schedule(PE, 5, 0).unwrap();
        assert_eq!(zero.rounds[0].await_from, vec![4]);
        assert_eq!(zero.rounds[3].send_to, vec![4]);
    }

    #[test]
    fn singleton_has_no_rounds() {
        for alg in [DS, PE, GB] {
            assert!(build_schedule(alg, 1, 0).unwrap().rounds.is_empty());
        }
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(
            build_schedule(AlgorithmKind::GatherBroadcast { degree: 1 }, 4, 0),
            Err(ScheduleError::BadDegree(1))
        );
        assert_eq!(build_schedule(DS, 4, 4), Err(ScheduleError::RankOutOfRange { me: 4, n: 4 }));
        assert_eq!(build_schedule(DS, 0, 0), Err(ScheduleError::Empty));
    }

    #[test]
    fn step_counts_from_formulas() {
        assert_eq!(num_steps(DS, 16), 4);
        assert_eq!(num_steps(PE, 5), 4);
        assert_eq!(num_steps(GB, 8), 6);
        assert_eq!(num_steps(DS, 1), 0);
        assert_eq!(num_steps(PE, 2), 1);
    }

    #[test]
    fn gb_root_gathers_then_broadcasts() {
        let all = build_all(GB, 8).unwrap();
        let root = &all[0];
        assert_eq!(root.rounds.len(), 6);
        assert_eq!(root.rounds[2].await_from, vec![1, 2]);
        assert_eq!(root.rounds[3].send_to, vec![1, 2]);
        // deepest leaf (rank 7, depth 3) sends first and is released last
        assert_eq!(all[7].rounds[0].send_to, vec![3]);
        assert_eq!(all[7].rounds[5].await_from, vec![3]);
        validate_schedules(&all).unwrap();
    }

    #[test]
    fn tampered_schedule_names_dangling_send() {
        let mut all = build_all(DS, 4).unwrap();
        all[2].rounds[1].await_from.clear();
        let v = validate_schedules(&all).unwrap_err();
        assert_eq!(v.kind, ViolationKind::DanglingSend);
        assert_eq!((v.round, v.sender, v.receiver), (1, 0, 2));
    }

    #[test]
    fn cyclic_dependency_is_deadlock() {
        // Each rank awaits the other in round 0 before its round-1 send.
        let all = vec![
            Schedule { n: 2, me: 0, rounds: vec![Round { send_to: vec![], await_from: vec![1] }, Round { send_to: vec![1], await_from: vec![] }] },
            Schedule { n: 2, me: 1, rounds: vec![Round { send_to: vec![], await_from: vec![0] }, Round { send_to: vec![0], await_from: vec![] }] },
        ];
        // the sends land in round 1 but the awaits sit in round 0
        assert!(validate_schedules(&all).is_err());
        let deadlocked = vec![
            Schedule { n: 2, me: 0, rounds: vec![Round::default(), Round { send_to: vec![1], await_from: vec![1] }] },
            Schedule { n: 2, me: 1, rounds: vec![Round { send_to: vec![], await_from: vec![0] }, Round { send_to: vec![0], ..Round::default() }] },
        ];
        let v = validate_schedules(&deadlocked).unwrap_err();
        assert!(matches!(v.kind, ViolationKind::DanglingSend | ViolationKind::DanglingAwait | ViolationKind::Deadlock));
    }

    #[test]
    fn tracker_records_and_advances() {
        let s = build_schedule(DS, 8, 0).unwrap();
        let mut t = RoundTracker::new(&s, 1);
        assert_eq!(t.bit_count(), 3);
        assert_eq!(t.advance(&s), 0..1);
        // round-1 arrival early: recorded, but round 2 stays blocked on round 0
        assert_eq!(t.record(&s, 1, 6), Ok(true));
        assert_eq!(t.advance(&s), 1..1);
        assert_eq!(t.record(&s, 0, 7), Ok(true));
        assert_eq!(t.record(&s, 0, 7), Ok(false));
        assert_eq!(t.advance(&s), 1..3);
        assert!(!t.is_complete());
        assert_eq!(t.missing(&s), vec![(2, 4)]);
        assert!(t.record(&s, 2, 5).is_err());
        t.record(&s, 2, 4).unwrap();
        assert!(t.is_complete());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ds".parse::<AlgorithmKind>().unwrap(), DS);
        assert_eq!("gb4".parse::<AlgorithmKind>().unwrap(), AlgorithmKind::GatherBroadcast { degree: 4 });
        assert!("gb1".parse::<AlgorithmKind>().is_err());
        assert!("xx".parse::<AlgorithmKind>().is_err());
        assert_eq!(AlgorithmKind::GatherBroadcast { degree: 3 }.to_string(), "gb3");
    }
}
