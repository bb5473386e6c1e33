pub mod audit;
pub mod crypto;
pub mod devicelog;
pub mod journal;
pub mod ledger;
pub mod pbs;
pub mod proto;
pub mod registry;
pub mod session;
pub mod sim;
pub mod tokens;
pub mod wire;
