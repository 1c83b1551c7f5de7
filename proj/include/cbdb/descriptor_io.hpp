#ifndef CBDB_DESCRIPTOR_IO_HPP_
#define CBDB_DESCRIPTOR_IO_HPP_

#include <filesystem>
#include <iosfwd>

#include "cbdb/elastic_loss.hpp"

namespace cbdb {

// Descriptor CSV: one row per item, `id,camera,v0,v1,...,v{D-1}`. A first
// line whose leading field is not an integer is taken as a header and skipped.
DescriptorBatch read_descriptor_csv(std::istream& in);
DescriptorBatch read_descriptor_csv(const std::filesystem::path& path);

void write_descriptor_csv(std::ostream& out, const DescriptorBatch& batch);
void write_descriptor_csv(const std::filesystem::path& path, const DescriptorBatch& batch);

}  // namespace cbdb

#endif  // CBDB_DESCRIPTOR_IO_HPP_
