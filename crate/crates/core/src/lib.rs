pub mod crypto;
pub mod shamir;
pub mod vote;
pub mod circle_shuffle;
pub mod script;
pub mod ledger;
pub mod election;
