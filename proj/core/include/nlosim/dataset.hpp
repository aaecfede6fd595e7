#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nlosim/conditions.hpp"
#include "nlosim/image.hpp"
#include "nlosim/nn/tensor.hpp"

namespace nlosim::dataset {

enum class Split { train, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

/// One (hidden, projection) pair. Paths are stored relative to the manifest
/// file and resolved to absolute on load.
struct SampleRecord {
    std::string hidden_path;
    std::string projection_path;
    int condition_id = 0;
    Split split = Split::train;
};

/// Dataset index: conditions + records + resolutions, saved as versioned
/// JSON beside the image tree. `geometry` is present for synthetic sets and
/// enables the classical baseline at evaluation time.
struct Manifest {
    int format_version = 1;
    int hidden_h = 0, hidden_w = 0;
    int wall_h = 0, wall_w = 0;
    int channels = 1;
    std::optional<SceneGeometry> geometry;
    std::vector<ConditionSpec> conditions;
    std::vector<SampleRecord> records;
    std::filesystem::path root;  // directory of the manifest file (set on load/save)

    int n_conditions() const { return static_cast<int>(conditions.size()); }
    std::size_t count(Split s) const;
    /// Contiguous ids, referenced ids valid, resolutions positive.
    void validate() const;

    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

/// Deterministic digit-like procedural hidden image: strokes and rectangles
/// on a dark background.
ImageGrid procedural_hidden(int h, int w, int c, std::uint64_t seed);

struct GenerateOptions {
    int train_count = 100;       // hidden images in the train split
    int test_count = 20;         // hidden images in the test split
    std::uint64_t seed = 0;
    int channels = 1;
    std::filesystem::path out_root;        // image tree + manifest.json go here
    std::filesystem::path source_dir;      // optional; empty = procedural set
    std::filesystem::path transport_cache; // optional; defaults under out_root
    int threads = 1;
};

/// Renders every hidden image under every condition and writes
///   <root>/<condition_id>/<split>/<index>_{hidden|proj}.png16
/// plus manifest.json. Deterministic per seed, byte-identical on re-runs.
Manifest generate_synthetic_dataset(const std::vector<ConditionSpec>& conds,
                                    const SceneGeometry& geom, const GenerateOptions& opt);

/// Noise stream seed the generator used for (condition, hidden index);
/// regenerating a sample with this seed reproduces its projection exactly.
std::uint64_t projection_noise_seed(std::uint64_t dataset_seed, int condition_id, int index);

/// Concatenates parts, deduplicating physically identical conditions and
/// reindexing ids contiguously in first-seen order. Splits are preserved.
Manifest mix_manifests(const std::vector<Manifest>& parts);

/// Ingests an NLOS-Passive-style tree: <root>/<condition>/<split>/ pairs of
/// *_hidden.png16 / *_proj.png16. Condition folder names in the
/// "70;1;A;Wall" style are parsed into full specs; other names get default
/// physics with sequential ids.
Manifest ingest_directory(const std::filesystem::path& root);

/// One immutable training batch; aligned indexing across fields.
struct Batch {
    std::vector<nn::Tensor> hidden;
    std::vector<nn::Tensor> projection;
    std::vector<int> condition_ids;
    std::vector<std::size_t> record_indices;
    int size() const { return static_cast<int>(condition_ids.size()); }
};

/// Seeded-permutation single-epoch stream: covers the split exactly once,
/// emits the final short batch.
class BatchStream {
public:
    BatchStream(const Manifest& m, Split split, int batch_size, std::uint64_t shuffle_seed);
    std::optional<Batch> next();
    std::size_t total_records() const { return order_.size(); }

private:
    const Manifest& m_;
    int batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace nlosim::dataset
