pub mod aug;
pub mod bench;
pub mod eval;
pub mod grad;
pub mod neck;
pub mod search;
