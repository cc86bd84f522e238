//! Training targets derived from temporal annotations.

use crate::error::{Error, Result};
use crate::model::{AnnotationSet, HierarchyLevel, Interval, StateClass};

/// Linear progress of `t` through `iv`: 0 at the start, 1 at the end.
pub fn progress_target(t: f64, iv: &Interval) -> Result<f64> {
    if iv.end <= iv.start {
        return Err(Error::domain(format!("zero-length interval [{}, {}]", iv.start, iv.end)));
    }
    if t < iv.start || t > iv.end {
        return Err(Error::domain(format!("t={t} outside [{}, {}]", iv.start, iv.end)));
    }
    Ok((t - iv.start) / (iv.end - iv.start))
}

/// Membership rule shared by targets and the simulator: half-open `[start, end)`,
/// except that a frame sitting exactly on the end of the stream is inside.
pub fn frame_inside(t: f64, iv: &Interval, duration: f64) -> bool {
    (t >= iv.start && t < iv.end) || (t == iv.end && t >= duration)
}

/// The annotated instance of `level` covering `t`, if any.
pub fn covering_instance(t: f64, a: &AnnotationSet, level: HierarchyLevel) -> Option<Interval> {
    a.level(level).map(|i| i.interval).find(|iv| frame_inside(t, iv, a.duration))
}

pub fn state_target(t: f64, a: &AnnotationSet) -> StateClass {
    if covering_instance(t, a, HierarchyLevel::Substep).is_some() {
        StateClass::StepAndSubstep
    } else if covering_instance(t, a, HierarchyLevel::Step).is_some() {
        StateClass::Step
    } else {
        StateClass::Background
    }
}

/// Progress of `level`'s covering instance at `t`, or `None` outside every instance.
pub fn level_progress(t: f64, a: &AnnotationSet, level: HierarchyLevel) -> Option<f64> {
    covering_instance(t, a, level)
        .filter(|iv| iv.end > iv.start)
        .map(|iv| progress_target(t, &iv).expect("covering instance contains t"))
}
