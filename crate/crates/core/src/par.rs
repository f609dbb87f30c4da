//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon;
//! without it they fall back to plain sequential iterators with identical results.

/// Map over a slice, collecting into a `Vec` in input order.
macro_rules! par_map {
    ($slice:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelRefIterator, ParallelIterator};
            $slice.par_iter().map($f).collect::<Vec<_>>()
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.iter().map($f).collect::<Vec<_>>()
        }
    }};
}

/// Map over a `Range<usize>`, collecting into a `Vec` in order.
macro_rules! par_range_map {
    ($range:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IntoParallelIterator, ParallelIterator};
            ($range).into_par_iter().map($f).collect::<Vec<_>>()
        }
        #[cfg(not(feature = "parallel"))]
        {
            ($range).map($f).collect::<Vec<_>>()
        }
    }};
}

/// Mutably visit fixed-size chunks (rows) of a slice together with their index.
macro_rules! par_rows_mut {
    ($slice:expr, $width:expr, $f:expr) => {{
        #[cfg(feature = "parallel")]
        {
            use rayon::iter::{IndexedParallelIterator, ParallelIterator};
            use rayon::slice::ParallelSliceMut;
            $slice.par_chunks_mut($width).enumerate().for_each($f);
        }
        #[cfg(not(feature = "parallel"))]
        {
            $slice.chunks_mut($width).enumerate().for_each($f);
        }
    }};
}

pub(crate) use par_map;
pub(crate) use par_range_map;
pub(crate) use par_rows_mut;

/// Number of worker threads the current build will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Deterministic sub-seed for an independent work cell (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
