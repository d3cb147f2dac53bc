#ifndef CLUSTERGNN_IO_H_
#define CLUSTERGNN_IO_H_

#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clustergnn/encoder.h"
#include "clustergnn/matcher.h"
#include "clustergnn/model.h"
#include "clustergnn/trainer.h"

namespace clustergnn {

// Malformed input file; names the file and the byte offset of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string path, std::uint64_t offset, const std::string& msg);

  const std::string& path() const { return path_; }
  std::uint64_t offset() const { return offset_; }

 private:
  std::string path_;
  std::uint64_t offset_;
};

// A required configuration key is absent.
class MissingKeyError : public std::runtime_error {
 public:
  explicit MissingKeyError(const std::string& key)
      : std::runtime_error("missing config key: " + key), key(key) {}
  std::string key;
};

inline constexpr char kKeypointMagic[4] = {'C', 'G', 'K', 'P'};
inline constexpr std::uint16_t kKeypointVersion = 1;
inline constexpr char kWeightsMagic[4] = {'C', 'G', 'W', 'T'};

std::vector<std::uint8_t> encode_keypoints_file(const KeypointSet& kp);
KeypointSet decode_keypoints_file(const std::vector<std::uint8_t>& bytes,
                                  const std::string& path);
void write_keypoints(const std::string& path, const KeypointSet& kp);
KeypointSet read_keypoints(const std::string& path);

std::vector<std::uint8_t> encode_weights_file(const ModelWeights<float>& w);
ModelWeights<float> decode_weights_file(const std::vector<std::uint8_t>& bytes,
                                        const std::string& path);
void write_weights(const std::string& path, const ModelWeights<float>& w);
ModelWeights<float> read_weights(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& b);

// Flat "key = value" text; '#' starts a comment.
struct KeyValues {
  struct Entry {
    std::string value;
    std::uint64_t offset = 0;  // byte offset of the line
  };
  std::map<std::string, Entry> entries;
};
KeyValues parse_key_values(const std::string& text, const std::string& path);
KeyValues read_key_values(const std::string& path);

// Throws MissingKeyError for absent required keys and FormatError for
// unparsable values.
TrainConfig train_config_from(const KeyValues& kv, const std::string& path);

// "i<TAB>j<TAB>score" per match, then "# "-prefixed summary lines.
void write_match_tsv(std::ostream& out, const MatchResult& result);

}  // namespace clustergnn

#endif  // CLUSTERGNN_IO_H_
