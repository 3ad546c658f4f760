//! The seven prediction tasks and a fixed-size map keyed by them.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// One of the seven heads. The declaration order is the canonical order used
/// for parameters, checkpoints, reports and loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Subtlety,
    State,
    Z,
    Diagnosis,
    X,
    Y,
    Size,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Subtlety,
        Task::State,
        Task::Z,
        Task::Diagnosis,
        Task::X,
        Task::Y,
        Task::Size,
    ];

    pub const CLASSIFICATION: [Task; 4] = [Task::Subtlety, Task::State, Task::Z, Task::Diagnosis];

    pub const REGRESSION: [Task; 3] = [Task::X, Task::Y, Task::Size];

    pub fn name(self) -> &'static str {
        match self {
            Task::Subtlety => "subtlety",
            Task::State => "state",
            Task::Z => "z",
            Task::Diagnosis => "diagnosis",
            Task::X => "x",
            Task::Y => "y",
            Task::Size => "size",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_classification(self) -> bool {
        self.index() < 4
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }
}

impl Serialize for Task {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// A value for every task, stored in canonical order.
///
/// Serializes as a JSON object keyed by task name. Deserialization requires
/// all seven keys and rejects unknown ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMap<T>([T; 7]);

impl<T> TaskMap<T> {
    pub fn from_fn(mut f: impl FnMut(Task) -> T) -> Self {
        TaskMap(Task::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Task, &T)> {
        Task::ALL.into_iter().zip(self.0.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Task, &mut T)> {
        Task::ALL.into_iter().zip(self.0.iter_mut())
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(Task, &T) -> U) -> TaskMap<U> {
        TaskMap::from_fn(|t| f(t, &self.0[t.index()]))
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(Task, &T) -> Result<U, E>) -> Result<TaskMap<U>, E> {
        let mut out: Vec<U> = Vec::with_capacity(7);
        for (t, v) in self.iter() {
            out.push(f(t, v)?);
        }
        match out.try_into() {
            Ok(arr) => Ok(TaskMap(arr)),
            Err(_) => unreachable!("seven tasks"),
        }
    }
}

impl<T: Clone> TaskMap<T> {
    pub fn splat(value: T) -> Self {
        TaskMap::from_fn(|_| value.clone())
    }
}

impl<T: Default> Default for TaskMap<T> {
    fn default() -> Self {
        TaskMap::from_fn(|_| T::default())
    }
}

impl<T> Index<Task> for TaskMap<T> {
    type Output = T;

    fn index(&self, task: Task) -> &T {
        &self.0[task.index()]
    }
}

impl<T> IndexMut<Task> for TaskMap<T> {
    fn index_mut(&mut self, task: Task) -> &mut T {
        &mut self.0[task.index()]
    }
}

impl<T: Serialize> Serialize for TaskMap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(7))?;
        for (t, v) in self.iter() {
            map.serialize_entry(t.name(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for TaskMap<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct TaskMapVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for TaskMapVisitor<T> {
            type Value = TaskMap<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object with one entry per task")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut slots: [Option<T>; 7] = Default::default();
                while let Some(key) = access.next_key::<String>()? {
                    let task: Task = key.parse().map_err(de::Error::custom)?;
                    if slots[task.index()].is_some() {
                        return Err(de::Error::custom(format!("duplicate task `{task}`")));
                    }
                    slots[task.index()] = Some(access.next_value()?);
                }
                let mut missing = Task::ALL.iter().filter(|t| slots[t.index()].is_none());
                if let Some(t) = missing.next() {
                    return Err(de::Error::custom(format!("missing task `{t}`")));
                }
                Ok(TaskMap(slots.map(|v| v.expect("checked above"))))
            }
        }

        d.deserialize_map(TaskMapVisitor(std::marker::PhantomData))
    }
}
