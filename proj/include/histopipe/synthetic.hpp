#pragma once

// Beer–Lambert forward models used to build fixtures with a known stain
// matrix and known class structure. The challenge images are not
// redistributable, so tests and the acceptance suite run on these.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "histopipe/image.hpp"
#include "histopipe/label.hpp"
#include "histopipe/stainlab.hpp"

namespace histopipe::synth {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-pixel stain mixture without spatial structure. Each pixel is nuclear
/// (hematoxylin dominant), stromal (eosin dominant) or mixed; all drawn
/// concentrations stay inside `bounds`.
struct PixelMixture {
  double nuclear_fraction = 0.35;
  double stroma_fraction = 0.45;
  Range nuclear_h{0.5, 2.0};
  Range nuclear_e{0.05, 0.2};
  Range stroma_h{0.05, 0.2};
  Range stroma_e{0.3, 1.5};
  Range mixed_h{0.05, 1.0};
  Range mixed_e{0.05, 1.0};
};

ConcentrationMap mixture_concentrations(int width, int height, const PixelMixture& mix,
                                        std::uint64_t seed);

/// Independent uniform H and E concentrations on [lo, hi] per pixel.
ConcentrationMap uniform_concentrations(int width, int height, Range range, std::uint64_t seed);

/// A random stain matrix within `max_degrees` of the Ruifrok H&E pair.
stain::StainMatrix perturbed_stains(std::uint64_t seed, double max_degrees);

/// Class-conditional tissue: nuclei are disks whose density and size depend
/// on the label, the rest is stroma or empty lumen. Stains and global
/// staining strength vary per image around the Ruifrok pair.
RgbImage tissue_image(int width, int height, Label label, std::uint64_t seed);

struct DatasetEntry {
  std::string image_id;
  std::string filename;
  Label label;
};

/// Writes `per_class` PNG images per label plus `labels.csv` into `dir`.
std::vector<DatasetEntry> write_dataset(const std::filesystem::path& dir, int per_class,
                                        int width, int height, std::uint64_t seed);

}  // namespace histopipe::synth
