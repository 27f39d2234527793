use crate::tensor::{Graph, Real, TensorError, Var};

/// `alpha·½‖student − teacher‖² + (1 − alpha)·½‖student − clean‖²`.
///
/// `teacher` must be an untracked node (see [`Graph::constant`]) so that
/// gradients reach the student only. At `alpha = 0` the teacher term is
/// not recorded at all, and at `alpha = 1` the clean term is dropped.
pub fn distill_loss<F: Real>(
    g: &mut Graph<F>,
    student: Var,
    teacher: Option<Var>,
    clean: Var,
    alpha: f64,
) -> Result<Var, TensorError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TensorError::Shape {
            op: "distill_loss",
            detail: format!("alpha must lie in [0, 1], got {alpha}"),
        });
    }
    let teacher = match teacher {
        Some(t) if alpha > 0.0 => {
            if g.is_tracked(t) {
                return Err(TensorError::Shape {
                    op: "distill_loss",
                    detail: "teacher output must not carry gradient".into(),
                });
            }
            Some(t)
        }
        Some(t) => {
            // shape is still checked so a wrong teacher batch fails loudly
            if g.dims(t) != g.dims(student) {
                return Err(TensorError::Shape {
                    op: "distill_loss",
                    detail: format!("teacher {:?} vs student {:?}", g.dims(t), g.dims(student)),
                });
            }
            None
        }
        None if alpha > 0.0 => {
            return Err(TensorError::Shape {
                op: "distill_loss",
                detail: "alpha > 0 needs a teacher output".into(),
            })
        }
        None => None,
    };
    let clean_term = g.l2_half(student, clean)?;
    let Some(t) = teacher else {
        return Ok(clean_term);
    };
    let teacher_term = g.l2_half(student, t)?;
    if alpha == 1.0 {
        return Ok(teacher_term);
    }
    let a = g.scale(teacher_term, F::of(alpha));
    let b = g.scale(clean_term, F::of(1.0 - alpha));
    g.add(a, b)
}
