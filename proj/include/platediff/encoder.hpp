#ifndef PLATEDIFF_ENCODER_HPP
#define PLATEDIFF_ENCODER_HPP

#include <memory>
#include <string>

#include "platediff/data_model.hpp"
#include "platediff/image.hpp"
#include "platediff/types.hpp"

namespace platediff {

struct EncoderInfo {
  std::string name;
  Index image_dim = 0;  // columns of encode_image output
  Index text_dim = 0;   // length of encode_text output
  int patch_grid = 0;   // patches per side; encode_image yields grid*grid rows
  bool frozen = true;   // encoders never train
};

// Frozen feature front end. Implementations must be deterministic: the
// same input yields the same output for the lifetime of the process, and
// parameter_digest() identifies the weights so checkpoints can refuse to
// load against a different encoder.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual EncoderInfo info() const = 0;
  // N x image_dim patch features, rows in row-major patch order.
  virtual Mat encode_image(const Image& image) const = 0;
  // Pooled text embedding.
  virtual Vec encode_text(const std::string& text) const = 0;
  virtual std::string parameter_digest() const = 0;
};

// Stage-matched query template fed to the text encoder; the item name is
// substituted verbatim with no further normalization.
std::string build_prompt(const std::string& item_name, Stage stage);

}  // namespace platediff

#endif  // PLATEDIFF_ENCODER_HPP
