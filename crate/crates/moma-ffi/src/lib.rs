//! C ABI over the scoring primitives in `moma-core`: answer parsing, the
//! icat and delta aggregates, and a Pareto-frontier builder behind an
//! opaque handle. Every function returns a [`MomaStatus`]; results come
//! back through out-pointers that are written only on `MOMA_STATUS_OK`.

use std::ffi::{c_char, CStr};

use moma_core::metrics::{pareto_frontier, ObjectiveVector, Orientation, StereoScores};
use moma_core::parse::parse_choice;
use moma_core::types::{OptionEntry, OptionTag};

/// Result code shared by every FFI entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was outside its documented domain.
    InvalidArgument = 3,
    /// The parser found no answer; not an error, but no index was written.
    NoChoice = 4,
}

/// Per-objective direction for [`moma_frontier_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomaOrientation {
    /// Larger values dominate.
    HigherBetter = 0,
    /// Values closer to the paired target dominate.
    Target = 1,
}

/// Opaque accumulator of points in objective space.
pub struct MomaFrontier {
    template: Vec<Orientation>,
    points: Vec<ObjectiveVector>,
}

/// Parses a free-form completion against exactly three option texts and
/// writes the 0-based index of the chosen option. Returns
/// `MOMA_STATUS_NO_CHOICE` when the reply names no option.
///
/// # Safety
/// `raw` and each entry of `options` must be valid NUL-terminated strings;
/// `options` must point to `n_options` pointers; `out_index` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn moma_parse_choice(
    raw: *const c_char,
    options: *const *const c_char,
    n_options: usize,
    out_index: *mut usize,
) -> MomaStatus {
    if raw.is_null() || options.is_null() || out_index.is_null() {
        return MomaStatus::NullArgument;
    }
    if n_options != 3 {
        return MomaStatus::InvalidArgument;
    }
    let Ok(raw) = CStr::from_ptr(raw).to_str() else {
        return MomaStatus::InvalidUtf8;
    };
    let mut entries = Vec::with_capacity(n_options);
    for i in 0..n_options {
        let ptr = *options.add(i);
        if ptr.is_null() {
            return MomaStatus::NullArgument;
        }
        let Ok(text) = CStr::from_ptr(ptr).to_str() else {
            return MomaStatus::InvalidUtf8;
        };
        // The parser only reads index and text; the tag is a placeholder.
        entries.push(OptionEntry { index: i, text: text.to_string(), tag: OptionTag::Unknown });
    }
    match parse_choice(raw, &entries).choice {
        Some(choice) => {
            *out_index = choice;
            MomaStatus::Ok
        }
        None => MomaStatus::NoChoice,
    }
}

/// Writes `lms * min(ss, 100 - ss) / 50`. Both inputs must lie in
/// `[0, 100]`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn moma_icat(ss: f64, lms: f64, out: *mut f64) -> MomaStatus {
    if out.is_null() {
        return MomaStatus::NullArgument;
    }
    if !(0.0..=100.0).contains(&ss) || !(0.0..=100.0).contains(&lms) {
        return MomaStatus::InvalidArgument;
    }
    match StereoScores::from_parts(ss, lms).icat() {
        Some(icat) => {
            *out = icat;
            MomaStatus::Ok
        }
        None => MomaStatus::InvalidArgument,
    }
}

/// Writes `100 * (value / reference - 1)` rounded half-away-from-zero to
/// one decimal. `reference` must be nonzero.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn moma_delta_percent(
    value: f64,
    reference: f64,
    out: *mut f64,
) -> MomaStatus {
    if out.is_null() {
        return MomaStatus::NullArgument;
    }
    match moma_core::metrics::delta_percent(value, reference) {
        Ok(delta) => {
            *out = delta;
            MomaStatus::Ok
        }
        Err(_) => MomaStatus::InvalidArgument,
    }
}

/// Allocates a frontier builder over `n_objectives` dimensions.
/// `orientations[i]` gives the direction of dimension `i`; `targets[i]` is
/// read only where the orientation is `MOMA_ORIENTATION_TARGET` (pass any
/// value, or a null `targets` if no dimension is targeted). Free with
/// [`moma_frontier_free`]. Returns null on invalid arguments.
///
/// # Safety
/// `orientations` must point to `n_objectives` values; `targets`, when
/// non-null, must as well.
#[no_mangle]
pub unsafe extern "C" fn moma_frontier_new(
    n_objectives: usize,
    orientations: *const MomaOrientation,
    targets: *const f64,
) -> *mut MomaFrontier {
    if n_objectives == 0 || orientations.is_null() {
        return std::ptr::null_mut();
    }
    let mut template = Vec::with_capacity(n_objectives);
    for i in 0..n_objectives {
        template.push(match *orientations.add(i) {
            MomaOrientation::HigherBetter => Orientation::HigherBetter,
            MomaOrientation::Target => {
                if targets.is_null() {
                    return std::ptr::null_mut();
                }
                Orientation::Target(*targets.add(i))
            }
        });
    }
    Box::into_raw(Box::new(MomaFrontier { template, points: Vec::new() }))
}

/// Appends one point. `values` must hold as many entries as the builder
/// has objectives.
///
/// # Safety
/// `frontier` must come from [`moma_frontier_new`] and not yet be freed;
/// `values` must point to the declared number of finite doubles.
#[no_mangle]
pub unsafe extern "C" fn moma_frontier_add(
    frontier: *mut MomaFrontier,
    values: *const f64,
) -> MomaStatus {
    let Some(frontier) = frontier.as_mut() else {
        return MomaStatus::NullArgument;
    };
    if values.is_null() {
        return MomaStatus::NullArgument;
    }
    let point = ObjectiveVector(
        frontier
            .template
            .iter()
            .enumerate()
            .map(|(i, orientation)| moma_core::metrics::Objective {
                name: format!("obj{i}"),
                value: *values.add(i),
                orientation: orientation.clone(),
            })
            .collect(),
    );
    frontier.points.push(point);
    MomaStatus::Ok
}

/// Number of points added so far; 0 for a null handle.
///
/// # Safety
/// `frontier`, when non-null, must come from [`moma_frontier_new`].
#[no_mangle]
pub unsafe extern "C" fn moma_frontier_len(frontier: *const MomaFrontier) -> usize {
    frontier.as_ref().map_or(0, |f| f.points.len())
}

/// Writes one flag per point, in insertion order: 1 if the point is on
/// the Pareto frontier, else 0. `n_flags` must equal the point count.
///
/// # Safety
/// `frontier` must come from [`moma_frontier_new`]; `out_flags` must point
/// to `n_flags` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn moma_frontier_compute(
    frontier: *const MomaFrontier,
    out_flags: *mut u8,
    n_flags: usize,
) -> MomaStatus {
    let Some(frontier) = frontier.as_ref() else {
        return MomaStatus::NullArgument;
    };
    if out_flags.is_null() {
        return MomaStatus::NullArgument;
    }
    if n_flags != frontier.points.len() {
        return MomaStatus::InvalidArgument;
    }
    let labeled: Vec<(String, ObjectiveVector)> =
        frontier.points.iter().enumerate().map(|(i, p)| (i.to_string(), p.clone())).collect();
    let Ok(on_frontier) = pareto_frontier(&labeled) else {
        return MomaStatus::InvalidArgument;
    };
    for i in 0..n_flags {
        *out_flags.add(i) = u8::from(on_frontier.contains(&i.to_string()));
    }
    MomaStatus::Ok
}

/// Releases a builder; a null handle is a no-op.
///
/// # Safety
/// `frontier` must come from [`moma_frontier_new`] and not be used after
/// this call.
#[no_mangle]
pub unsafe extern "C" fn moma_frontier_free(frontier: *mut MomaFrontier) {
    if !frontier.is_null() {
        drop(Box::from_raw(frontier));
    }
}
