//! Turn-order auction for a conflicted cell.
//!
//! Contenders bid for passage turns. The allocation rule hands out turns in
//! decreasing bid order, and the turn-`q` winner pays the externality it
//! imposes on everyone behind it:
//!
//! ```text
//! h(q) = sum_{j=q}^{k} b_{j+1} (alpha_j - alpha_{j+1}),   b_{k+1} = alpha_{k+1} = 0
//! ```
//!
//! where `b_j` is the j-th highest bid and `alpha` the per-turn reward
//! schedule. Utility is `v * alpha_q - h(q)`. This is the VCG payment for a
//! position auction, so bidding the true value is a dominant strategy and the
//! truthful allocation maximizes `sum v_i * alpha_turn(i)`.
//!
//! Everything is generic over [`Money`], implemented for `f64` and for exact
//! `BigRational`.

use std::cmp::Ordering;
use std::fmt::Debug;

use num_traits::Num;
use thiserror::Error;

/// Scalar type for bids, rewards and payments.
pub trait Money: Num + Clone + PartialOrd + Debug {}

impl<T: Num + Clone + PartialOrd + Debug> Money for T {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuctionError {
    #[error("auction needs at least one bid")]
    NoBids,
    #[error("auction needs at least two contenders, got {0}")]
    TooFewContenders(usize),
    #[error("bid of agent {0} is negative or not a number")]
    InvalidBid(usize),
    #[error("turn {q} out of range 1..={k}")]
    TurnOutOfRange { q: usize, k: usize },
    #[error("reward schedule has {have} entries, {need} needed")]
    ScheduleTooShort { need: usize, have: usize },
    #[error("reward schedule must be positive and strictly decreasing")]
    InvalidSchedule,
    #[error("{values} values supplied for {bids} bids")]
    LengthMismatch { bids: usize, values: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bid<T> {
    pub agent: usize,
    pub amount: T,
    /// Tick at which the agent joined the conflict; earlier wins ties.
    pub arrival_tick: u32,
}

impl<T> Bid<T> {
    pub fn new(agent: usize, amount: T) -> Self {
        Bid {
            agent,
            amount,
            arrival_tick: 0,
        }
    }

    pub fn arriving(mut self, tick: u32) -> Self {
        self.arrival_tick = tick;
        self
    }
}

/// Per-turn rewards `alpha_1 > alpha_2 > ... > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSchedule<T> {
    alpha: Vec<T>,
}

impl<T: Money> RewardSchedule<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self, AuctionError> {
        let positive = alpha.iter().all(|a| *a > T::zero());
        let decreasing = alpha.windows(2).all(|w| w[0] > w[1]);
        if alpha.is_empty() || !positive || !decreasing {
            return Err(AuctionError::InvalidSchedule);
        }
        Ok(RewardSchedule { alpha })
    }

    /// `alpha_q = 1 / q` for `q = 1..=k`.
    pub fn harmonic(k: usize) -> Self {
        Self::delayed(T::one(), k)
    }

    /// `alpha_q = 1 / (d + q - 1)`: the reward for reaching a goal `d`
    /// ticks away after waiting `q - 1` turns. `d` must be at least 1.
    pub fn delayed(d: T, k: usize) -> Self {
        assert!(d >= T::one(), "delay offset must be >= 1");
        let mut denom = d;
        let mut alpha = Vec::with_capacity(k);
        for _ in 0..k {
            alpha.push(T::one() / denom.clone());
            denom = denom + T::one();
        }
        RewardSchedule { alpha }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `alpha_q` for 1-based `q`; zero past the end of the schedule.
    pub fn alpha(&self, q: usize) -> T {
        assert!(q >= 1, "turns are 1-based");
        self.alpha.get(q - 1).cloned().unwrap_or_else(T::zero)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.alpha
    }
}

fn check_bids<T: Money>(bids: &[Bid<T>]) -> Result<(), AuctionError> {
    if bids.is_empty() {
        return Err(AuctionError::NoBids);
    }
    for b in bids {
        // NaN is incomparable and rejected too.
        if b.amount.partial_cmp(&T::zero()).is_none_or(|o| o.is_lt()) {
            return Err(AuctionError::InvalidBid(b.agent));
        }
    }
    Ok(())
}

/// Allocation rule: indices into `bids` in turn order (highest bid first,
/// ties by earlier arrival, then lower agent id).
pub fn allocate<T: Money>(bids: &[Bid<T>]) -> Result<Vec<usize>, AuctionError> {
    check_bids(bids)?;
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&bids[a], &bids[b]);
        y.amount
            .partial_cmp(&x.amount)
            .unwrap_or(Ordering::Equal)
            .then(x.arrival_tick.cmp(&y.arrival_tick))
            .then(x.agent.cmp(&y.agent))
    });
    Ok(order)
}

/// Payment of the turn-`q` agent given bids sorted in turn order.
pub fn payment<T: Money>(
    bids_sorted_desc: &[T],
    q: usize,
    schedule: &RewardSchedule<T>,
) -> Result<T, AuctionError> {
    let k = bids_sorted_desc.len();
    if q == 0 || q > k {
        return Err(AuctionError::TurnOutOfRange { q, k });
    }
    if schedule.len() < k {
        return Err(AuctionError::ScheduleTooShort {
            need: k,
            have: schedule.len(),
        });
    }
    // Terms j = q..k-1; the j = k term multiplies b_{k+1} = 0.
    let mut h = T::zero();
    for (j, next_bid) in bids_sorted_desc.iter().enumerate().take(k).skip(q) {
        h = h + next_bid.clone() * (schedule.alpha(j) - schedule.alpha(j + 1));
    }
    Ok(h)
}

pub fn utility<T: Money>(value: T, q: usize, payment: T, schedule: &RewardSchedule<T>) -> T {
    value * schedule.alpha(q) - payment
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome<T> {
    /// Agent ids in turn order.
    pub order: Vec<usize>,
    /// Turn (1-based) per input bid.
    pub turns: Vec<usize>,
    /// Payment per input bid.
    pub payments: Vec<T>,
    /// Utility per input bid, evaluated with true values.
    pub utilities: Vec<T>,
    /// `sum v_i * alpha_turn(i)` with true values.
    pub welfare: T,
}

/// Runs allocation and payments for `bids`, scoring utilities and welfare
/// against `values` (true incentives, aligned with `bids`).
pub fn run_auction<T: Money>(
    bids: &[Bid<T>],
    values: &[T],
    schedule: &RewardSchedule<T>,
) -> Result<AuctionOutcome<T>, AuctionError> {
    if bids.len() < 2 {
        return Err(AuctionError::TooFewContenders(bids.len()));
    }
    settle(bids, values, schedule)
}

/// [`run_auction`] without the two-contender precondition.
fn settle<T: Money>(
    bids: &[Bid<T>],
    values: &[T],
    schedule: &RewardSchedule<T>,
) -> Result<AuctionOutcome<T>, AuctionError> {
    if values.len() != bids.len() {
        return Err(AuctionError::LengthMismatch {
            bids: bids.len(),
            values: values.len(),
        });
    }
    let order = allocate(bids)?;
    let sorted: Vec<T> = order.iter().map(|&i| bids[i].amount.clone()).collect();
    let k = bids.len();
    let mut turns = vec![0; k];
    let mut payments = vec![T::zero(); k];
    let mut utilities = vec![T::zero(); k];
    let mut welfare = T::zero();
    for (pos, &i) in order.iter().enumerate() {
        let q = pos + 1;
        let h = payment(&sorted, q, schedule)?;
        turns[i] = q;
        utilities[i] = utility(values[i].clone(), q, h.clone(), schedule);
        welfare = welfare + values[i].clone() * schedule.alpha(q);
        payments[i] = h;
    }
    Ok(AuctionOutcome {
        order: order.iter().map(|&i| bids[i].agent).collect(),
        turns,
        payments,
        utilities,
        welfare,
    })
}

/// Utility of contender `focal` when it bids `deviant_bid` and everyone else
/// bids as in `bids`. `values` are the true incentives.
pub fn deviation_utility<T: Money>(
    bids: &[Bid<T>],
    values: &[T],
    focal: usize,
    deviant_bid: T,
    schedule: &RewardSchedule<T>,
) -> Result<T, AuctionError> {
    let mut shifted = bids.to_vec();
    shifted[focal].amount = deviant_bid;
    let outcome = settle(&shifted, values, schedule)?;
    Ok(outcome.utilities[focal].clone())
}

/// Utility curve of contender `focal` over `bid_grid`, everyone else bidding
/// truthfully. `contenders` carry truthful bids, so `contenders[i].amount` is
/// agent `i`'s true value.
pub fn sweep_utilities<T: Money>(
    contenders: &[Bid<T>],
    focal: usize,
    bid_grid: &[T],
    schedule: &RewardSchedule<T>,
) -> Result<Vec<(T, T)>, AuctionError> {
    let values: Vec<T> = contenders.iter().map(|b| b.amount.clone()).collect();
    bid_grid
        .iter()
        .map(|bid| {
            deviation_utility(contenders, &values, focal, bid.clone(), schedule)
                .map(|u| (bid.clone(), u))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn ri(n: i64) -> BigRational {
        r(n, 1)
    }

    fn bids(amounts: &[i64]) -> Vec<Bid<BigRational>> {
        amounts
            .iter()
            .enumerate()
            .map(|(i, a)| Bid::new(i, ri(*a)))
            .collect()
    }

    #[test]
    fn allocation_sorts_descending() {
        assert_eq!(allocate(&bids(&[7, 4, 2])).unwrap(), vec![0, 1, 2]);
        assert_eq!(allocate(&bids(&[2, 7, 4])).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn ties_go_to_earlier_arrival_then_lower_id() {
        let tied = vec![Bid::new(0, 5.0).arriving(3), Bid::new(1, 5.0).arriving(1)];
        assert_eq!(allocate(&tied).unwrap(), vec![1, 0]);
        let same_tick = vec![Bid::new(4, 5.0), Bid::new(2, 5.0)];
        assert_eq!(allocate(&same_tick).unwrap(), vec![1, 0]);
    }

    #[test]
    fn empty_and_negative_bids_rejected() {
        assert_eq!(allocate::<f64>(&[]), Err(AuctionError::NoBids));
        assert_eq!(
            allocate(&[Bid::new(3, -1.0)]),
            Err(AuctionError::InvalidBid(3))
        );
        assert_eq!(
            allocate(&[Bid::new(1, f64::NAN)]),
            Err(AuctionError::InvalidBid(1))
        );
    }

    #[test]
    fn worked_payments_and_utilities() {
        let s = RewardSchedule::harmonic(3);
        let sorted = [ri(7), ri(4), ri(2)];
        assert_eq!(payment(&sorted, 1, &s).unwrap(), r(7, 3));
        assert_eq!(payment(&sorted, 2, &s).unwrap(), r(1, 3));
        assert_eq!(payment(&sorted, 3, &s).unwrap(), ri(0));
        assert_eq!(utility(ri(7), 1, r(7, 3), &s), r(14, 3));
        assert_eq!(utility(ri(4), 2, r(1, 3), &s), r(5, 3));
        assert_eq!(utility(ri(0), 2, ri(0), &s), ri(0));
    }

    #[test]
    fn payment_turn_bounds() {
        let s = RewardSchedule::<f64>::harmonic(2);
        assert_eq!(
            payment(&[1.0, 0.5], 0, &s),
            Err(AuctionError::TurnOutOfRange { q: 0, k: 2 })
        );
        assert_eq!(
            payment(&[1.0, 0.5], 3, &s),
            Err(AuctionError::TurnOutOfRange { q: 3, k: 2 })
        );
        assert_eq!(
            payment(&[1.0, 0.5, 0.2], 1, &s),
            Err(AuctionError::ScheduleTooShort { need: 3, have: 2 })
        );
    }

    #[test]
    fn welfare_and_deviation_example() {
        let s = RewardSchedule::harmonic(3);
        let b = bids(&[7, 4, 2]);
        let values: Vec<_> = b.iter().map(|x| x.amount.clone()).collect();
        let out = run_auction(&b, &values, &s).unwrap();
        assert_eq!(out.welfare, r(29, 3));
        assert_eq!(out.utilities, vec![r(14, 3), r(5, 3), r(2, 3)]);
        // Agent 1 (v = 4) overbidding to 8 takes turn 1 and pays for both others.
        let deviant = deviation_utility(&b, &values, 1, ri(8), &s).unwrap();
        assert_eq!(deviant, r(1, 6));
        assert!(deviant < out.utilities[1]);
    }

    #[test]
    fn equal_bids_same_welfare_either_order() {
        let s = RewardSchedule::<f64>::harmonic(2);
        let a = run_auction(&[Bid::new(0, 3.0), Bid::new(1, 3.0)], &[3.0, 3.0], &s).unwrap();
        let b = run_auction(&[Bid::new(1, 3.0), Bid::new(0, 3.0)], &[3.0, 3.0], &s).unwrap();
        assert_eq!(a.welfare, b.welfare);
    }

    #[test]
    fn single_contender_rejected_by_run_auction() {
        let s = RewardSchedule::<f64>::harmonic(1);
        assert_eq!(
            run_auction(&[Bid::new(0, 1.0)], &[1.0], &s),
            Err(AuctionError::TooFewContenders(1))
        );
    }

    #[test]
    fn schedule_validation() {
        assert!(RewardSchedule::new(vec![1.0, 0.5, 0.5]).is_err());
        assert!(RewardSchedule::new(vec![1.0, -0.5]).is_err());
        assert!(RewardSchedule::<f64>::new(vec![]).is_err());
        let d = RewardSchedule::delayed(ri(4), 3);
        assert_eq!(d.as_slice(), &[r(1, 4), r(1, 5), r(1, 6)]);
        assert_eq!(d.alpha(4), ri(0));
    }

    #[test]
    fn sweep_single_contender_is_flat() {
        let s = RewardSchedule::harmonic(1);
        let curve = sweep_utilities(&bids(&[3]), 0, &[ri(0), ri(5), ri(10)], &s).unwrap();
        assert!(curve.iter().all(|(_, u)| *u == ri(3)));
    }

    #[test]
    fn sweep_two_agents_plateau_then_drop() {
        // Values [5, 3]; agent 1 sweeps its bid across 0..=10.
        let s = RewardSchedule::harmonic(2);
        let grid: Vec<_> = (0..=10).map(ri).collect();
        let curve = sweep_utilities(&bids(&[5, 3]), 1, &grid, &s).unwrap();
        for (b, u) in &curve {
            if *b < ri(5) {
                assert_eq!(*u, r(3, 2));
            } else if *b > ri(5) {
                // 3 * 1 - 5 * (1 - 1/2)
                assert_eq!(*u, r(1, 2));
            }
        }
        // Ties at 5 go to agent 0 (lower id), so agent 1 stays second.
        assert_eq!(curve[5].1, r(3, 2));
    }
}
