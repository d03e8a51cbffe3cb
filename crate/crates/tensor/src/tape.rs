use std::cell::RefCell;
use std::rc::Rc;

use crate::{Float, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Recording of differentiable operations, replayed in reverse by
/// [`Tape::backward`].
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Tape<T> {
    pub fn new() -> Rc<Self> {
        Rc::new(Tape {
            nodes: RefCell::new(Vec::new()),
        })
    }

    /// Registers a leaf whose gradient will be reported by `backward`.
    pub fn leaf(self: &Rc<Self>, value: Tensor<T>) -> Var<T> {
        self.leaf_shared(Rc::new(value))
    }

    pub fn leaf_shared(self: &Rc<Self>, value: Rc<Tensor<T>>) -> Var<T> {
        let id = self.push(Vec::new(), None);
        Var {
            value,
            node: Some((self.clone(), id)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: Vec<usize>, backward: Option<BackwardFn<T>>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, backward });
        nodes.len() - 1
    }

    /// Reverse-mode sweep seeded with `d(root)/d(root) = 1` (the root is
    /// usually a scalar loss; for tensors this computes the gradient of the
    /// element sum).
    pub fn backward(self: &Rc<Self>, root: &Var<T>) -> Grads<T> {
        let root_id = match &root.node {
            Some((tape, id)) if Rc::ptr_eq(tape, self) => *id,
            _ => panic!("backward root is not recorded on this tape"),
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(Tensor::full(root.value.shape(), T::one()));
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(f) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_grads = f(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    match grads[p].as_mut() {
                        Some(acc) => acc.add_assign(&pg),
                        None => grads[p] = Some(pg),
                    }
                }
            }
        }
        Grads {
            tape: Rc::downgrade(self),
            grads,
        }
    }
}

/// Gradients produced by one backward sweep; only leaves keep theirs.
pub struct Grads<T> {
    tape: std::rc::Weak<Tape<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        let (tape, id) = v.node.as_ref()?;
        let mine = self.tape.upgrade()?;
        if !Rc::ptr_eq(tape, &mine) {
            return None;
        }
        self.grads.get(*id)?.as_ref()
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        let (_, id) = v.node.as_ref()?;
        self.grads.get_mut(*id)?.take()
    }
}

/// A tensor value plus, when it depends on a leaf, its place on a tape.
#[derive(Clone)]
pub struct Var<T> {
    value: Rc<Tensor<T>>,
    node: Option<(Rc<Tape<T>>, usize)>,
}

impl<T: Float> Var<T> {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Var {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn constant_shared(value: Rc<Tensor<T>>) -> Self {
        Var { value, node: None }
    }

    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    #[inline]
    pub fn shared(&self) -> Rc<Tensor<T>> {
        self.value.clone()
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Rc<Tape<T>>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Self {
        Var {
            value: self.value.clone(),
            node: None,
        }
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        assert_eq!(self.value.len(), 1, "item() on a non-scalar");
        self.value.data()[0]
    }

    /// Records `out` as a function of `inputs`. `backward` maps the output
    /// gradient to one optional gradient per input (same order); it is only
    /// kept when some input is on a tape.
    pub fn from_op<F>(out: Tensor<T>, inputs: &[&Var<T>], backward: F) -> Var<T>
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let tape = inputs.iter().find_map(|v| v.tape().cloned());
        match tape {
            None => Var::constant(out),
            Some(tape) => {
                let parents: Vec<usize> = inputs
                    .iter()
                    .map(|v| match &v.node {
                        Some((t, id)) => {
                            assert!(Rc::ptr_eq(t, &tape), "mixing variables from two tapes");
                            *id
                        }
                        // Constants get a throwaway leaf slot; the gradient
                        // routed there is simply never read.
                        None => usize::MAX,
                    })
                    .collect();
                let has_const = parents.contains(&usize::MAX);
                let (parents, backward): (Vec<usize>, BackwardFn<T>) = if has_const {
                    let keep: Vec<bool> = parents.iter().map(|&p| p != usize::MAX).collect();
                    let kept: Vec<usize> = parents.into_iter().filter(|&p| p != usize::MAX).collect();
                    (
                        kept,
                        Box::new(move |g: &Tensor<T>| {
                            backward(g)
                                .into_iter()
                                .zip(&keep)
                                .filter_map(|(gr, &k)| k.then_some(gr))
                                .collect()
                        }),
                    )
                } else {
                    (parents, Box::new(backward))
                };
                let id = tape.push(parents, Some(backward));
                Var {
                    value: Rc::new(out),
                    node: Some((tape, id)),
                }
            }
        }
    }
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}
