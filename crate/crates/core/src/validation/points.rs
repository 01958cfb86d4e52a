use std::fmt;

use nalgebra::Vector3;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ValidationError;

pub const POINT_SET_FORMAT_VERSION: u32 = 1;

/// Named 3-D points (mm) expressed in one image frame, e.g. the catheter tip
/// and valve centroids labeled in a CT or ultrasound volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    pub frame_name: String,
    points: Vec<(String, Vector3<f64>)>,
}

impl LabeledPointSet {
    pub fn new(frame_name: impl Into<String>) -> Self {
        Self {
            frame_name: frame_name.into(),
            points: Vec::new(),
        }
    }

    pub fn from_points<I, S>(
        frame_name: impl Into<String>,
        points: I,
    ) -> Result<Self, ValidationError>
    where
        I: IntoIterator<Item = (S, Vector3<f64>)>,
        S: Into<String>,
    {
        let mut set = Self::new(frame_name);
        for (name, p) in points {
            set.insert(name, p)?;
        }
        Ok(set)
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        p: Vector3<f64>,
    ) -> Result<(), ValidationError> {
        let name = name.into();
        if !p.iter().all(|v| v.is_finite()) {
            return Err(ValidationError::NonFinitePoint { name });
        }
        if self.get(&name).is_some() {
            return Err(ValidationError::DuplicatePoint(name));
        }
        self.points.push((name, p));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Vector3<f64>> {
        self.points.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn require(&self, name: &str) -> Result<&Vector3<f64>, ValidationError> {
        self.get(name)
            .ok_or_else(|| ValidationError::MissingPoint(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector3<f64>)> {
        self.points.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pairs of points present in both sets, in `self`'s order.
    pub fn correspondences<'a>(
        &'a self,
        other: &'a LabeledPointSet,
    ) -> Vec<(&'a str, Vector3<f64>, Vector3<f64>)> {
        self.points
            .iter()
            .filter_map(|(n, p)| other.get(n).map(|q| (n.as_str(), *p, *q)))
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("point sets always serialize")
    }

    pub fn from_json_str(s: &str) -> Result<Self, ValidationError> {
        serde_json::from_str(s).map_err(|e| ValidationError::Study(e.to_string()))
    }
}

struct Points<'a>(&'a [(String, Vector3<f64>)]);

impl Serialize for Points<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (name, p) in self.0 {
            map.serialize_entry(name, &[p.x, p.y, p.z])?;
        }
        map.end()
    }
}

impl Serialize for LabeledPointSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            frame_name: &'a str,
            points: Points<'a>,
        }
        Doc {
            format_version: POINT_SET_FORMAT_VERSION,
            frame_name: &self.frame_name,
            points: Points(&self.points),
        }
        .serialize(s)
    }
}

/// Ordered point map that rejects repeated names.
struct OrderedPoints(Vec<(String, Vector3<f64>)>);

impl<'de> Deserialize<'de> for OrderedPoints {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedPoints;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from point name to [x, y, z]")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<OrderedPoints, A::Error> {
                let mut out: Vec<(String, Vector3<f64>)> = Vec::new();
                while let Some((name, xyz)) = map.next_entry::<String, [f64; 3]>()? {
                    if out.iter().any(|(n, _)| *n == name) {
                        return Err(de::Error::custom(format!("duplicate point name {name:?}")));
                    }
                    out.push((name, Vector3::from(xyz)));
                }
                Ok(OrderedPoints(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl<'de> Deserialize<'de> for LabeledPointSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            format_version: u32,
            frame_name: String,
            points: OrderedPoints,
        }
        let doc = Doc::deserialize(d)?;
        if doc.format_version != POINT_SET_FORMAT_VERSION {
            return Err(de::Error::custom(format!(
                "unsupported point set format version {}",
                doc.format_version
            )));
        }
        LabeledPointSet::from_points(doc.frame_name, doc.points.0).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_keeps_order() {
        let set = LabeledPointSet::from_points(
            "ct",
            [
                ("tip", Vector3::new(1.0, 2.0, 3.0)),
                ("aortic", Vector3::new(-4.5, 0.0, 12.25)),
                ("mitral", Vector3::new(7.0, 7.0, 7.0)),
            ],
        )
        .unwrap();
        let s = set.to_json_string();
        assert!(s.find("tip").unwrap() < s.find("aortic").unwrap());
        assert_eq!(LabeledPointSet::from_json_str(&s).unwrap(), set);
    }

    #[test]
    fn rejects_duplicates_and_versions() {
        let dup = r#"{"format_version":1,"frame_name":"us","points":{"a":[0,0,0],"a":[1,1,1]}}"#;
        assert!(LabeledPointSet::from_json_str(dup).is_err());
        let v2 = r#"{"format_version":2,"frame_name":"us","points":{}}"#;
        assert!(LabeledPointSet::from_json_str(v2).is_err());
        let mut set = LabeledPointSet::new("us");
        set.insert("a", Vector3::zeros()).unwrap();
        assert_eq!(
            set.insert("a", Vector3::x()),
            Err(ValidationError::DuplicatePoint("a".into()))
        );
    }
}
