//! Segment auctions for placing ads in generated text.
//!
//! Each segment of a model's output (a sentence, a paragraph, a document)
//! runs its own auction. Ads win with probability proportional to
//! `relevance × bid` through Gumbel-perturbed log scores. Winners pay the
//! threshold bid that would still have won, which makes truthful bidding a
//! dominant strategy for every noise draw.
//!
//! * [`mechanisms`]: the single, multi-slot and set auctions and the session loop.
//! * [`analytic`]: closed forms for allocations, set probabilities, expected
//!   payments and logarithmic welfare.
//! * [`sim`]: seeded parallel experiments, Monte Carlo oracles and verification suites.
//! * [`metrics`]: per-session metrics, normalization and report rendering.
//! * [`providers`]: relevance and generation back ends (static, embedding, chat).
//! * [`cli`]: the `segauc` command line.
//!
//! ```
//! use segment_auction::mechanisms::single_auction;
//! use segment_auction::sampling::{NoiseDraw, RngStream};
//!
//! let bids = [3.0, 3.0, 2.0, 2.0];
//! let q = [0.36, 0.87, 0.31, 0.26];
//! let noise = NoiseDraw::sample(&mut RngStream::new(7, 0, 0).rng(), bids.len());
//! let segment = single_auction(&bids, &q, &noise).unwrap();
//! let (winner, price) = (segment.winners[0], segment.prices[0]);
//! assert!(price <= bids[winner]);
//! ```
//!
//! The guide in `book/` walks through the concepts; its snippets are compiled
//! as doc-tests of this crate.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod mechanisms;
pub mod metrics;
pub mod providers;
pub mod sampling;
pub mod scenarios;
pub mod sim;
pub mod types;

// One module per chapter so a failing snippet is easy to place.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/segment-auction.md")]
    mod segment_auction {}
    #[doc = include_str!("../../../book/src/payments.md")]
    mod payments {}
    #[doc = include_str!("../../../book/src/multi-allocation.md")]
    mod multi_allocation {}
    #[doc = include_str!("../../../book/src/combinatorial.md")]
    mod combinatorial {}
    #[doc = include_str!("../../../book/src/welfare.md")]
    mod welfare {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/providers.md")]
    mod providers {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
