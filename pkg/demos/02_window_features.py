"""Window-statistics features from integral images.

Shows the ring geometry, the exact integer prefix tables, and how the
102-dimensional per-pixel descriptor is assembled.
"""

import numpy as np

import pvdetect as pv
from pvdetect.features import extract_feature_image

spec = pv.FeatureSpec()
print(f"window side {spec.window_side}, rings {spec.ring_radii}"
      f" -> {len(spec.window_offsets())} windows x 6 = {spec.feature_count} features")
print("ring r=2 window centers:", pv.ring_offsets(2))

tile, annotations = pv.generate_scene(
    pv.SceneParams(width=128, height=128, n_panels=3, seed=3), "feat_demo"
)
integral = pv.build_integral(tile)
print(f"\nintegral tables: {integral.sums.shape}, dtype {integral.sums.dtype}")
total = integral.sums[-1, -1]
assert np.array_equal(total, tile.pixels.astype(np.int64).sum(axis=(0, 1)))
print(f"bottom-right corner = per-channel pixel sums: {total.tolist()}")

first = annotations[0].vertices
panel_pixel = (
    int((first[0][0] + first[2][0]) // 2),
    int((first[0][1] + first[2][1]) // 2),
)
edge_pixel = (int(first[0][0]), int(first[0][1]))  # window straddles the boundary
background_pixel = (5, 5)

for name, (x, y) in (
    ("panel interior", panel_pixel),
    ("panel corner", edge_pixel),
    ("background", background_pixel),
):
    vec = pv.extract_pixel_features(integral, spec, x, y)
    means = vec.reshape(-1, 6)[:, :3]
    variances = vec.reshape(-1, 6)[:, 3:]
    print(f"\n{name} pixel ({x},{y}):")
    print(f"  center-window means  (R,G,B): {np.round(means[0], 1).tolist()}")
    print(f"  center-window variances     : {np.round(variances[0], 1).tolist()}")
    print(f"  mean over all windows       : {means.mean():.1f}"
          f", variance level {variances.mean():.1f}")

feature_image = extract_feature_image(tile, spec)
probe = pv.extract_pixel_features(integral, spec, 64, 64)
assert np.array_equal(feature_image[64, 64], probe)
print(f"\nfull feature image {feature_image.shape}:"
      " whole-image and single-pixel paths agree bit for bit")
