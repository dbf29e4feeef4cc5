//! Great-circle distances and point-to-polyline geometry.
//!
//! All coordinates are (latitude, longitude) pairs in degrees; all distances
//! are kilometers. Straight-line (haversine) distance is used everywhere:
//! weather joins, the allocation distance table, and dispatch travel.

use crate::scalar::Real;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Haversine great-circle distance between two (lat, lon) degree pairs, in km.
pub fn haversine_km<T: Real>(a: (T, T), b: (T, T)) -> T {
    let r = T::of(EARTH_RADIUS_KM);
    let two = T::of(2.0);
    let lat1 = a.0.to_radians();
    let lat2 = b.0.to_radians();
    let dlat = (b.0 - a.0).to_radians();
    let dlon = (b.1 - a.1).to_radians();
    let s = (dlat / two).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / two).sin().powi(2);
    two * r * s.min(T::one()).sqrt().asin()
}

/// Total haversine length of a polyline, in km.
pub fn path_length_km<T: Real>(polyline: &[(T, T)]) -> T {
    polyline
        .windows(2)
        .map(|w| haversine_km(w[0], w[1]))
        .sum()
}

/// Arithmetic mean of the polyline vertices; the segment representative point.
pub fn centroid<T: Real>(polyline: &[(T, T)]) -> (T, T) {
    let n = T::of_usize(polyline.len());
    let (mut lat, mut lon) = (T::zero(), T::zero());
    for &(a, b) in polyline {
        lat = lat + a;
        lon = lon + b;
    }
    (lat / n, lon / n)
}

/// Minimum distance from a point to a polyline, in km.
///
/// Each line piece is treated in a local equirectangular projection centered
/// on the piece, which is accurate to well below a meter at the tens-of-meters
/// scale this is used for (incident-to-segment mapping).
pub fn point_to_polyline_km<T: Real>(point: (T, T), polyline: &[(T, T)]) -> T {
    if polyline.len() == 1 {
        return haversine_km(point, polyline[0]);
    }
    let mut best = T::infinity();
    for w in polyline.windows(2) {
        let d = point_to_piece_km(point, w[0], w[1]);
        if d < best {
            best = d;
        }
    }
    best
}

/// Distance from a point to a single line piece via local planar projection.
fn point_to_piece_km<T: Real>(p: (T, T), a: (T, T), b: (T, T)) -> T {
    let km_per_deg = T::of(EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
    let ref_lat = ((a.0 + b.0) / T::of(2.0)).to_radians();
    let scale_lon = ref_lat.cos() * km_per_deg;

    // Planar coordinates with p at the origin.
    let ax = (a.1 - p.1) * scale_lon;
    let ay = (a.0 - p.0) * km_per_deg;
    let bx = (b.1 - p.1) * scale_lon;
    let by = (b.0 - p.0) * km_per_deg;

    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > T::zero() {
        (-(ax * dx + ay * dy) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    (cx * cx + cy * cy).sqrt()
}
