#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ranker {

// One named parameter tensor. Values are float32 so checkpoints round-trip
// bit for bit; all arithmetic promotes to double.
struct ParamTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool trainable = true;
  std::vector<float> v;

  std::size_t size() const { return v.size(); }
  float& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  float at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

// Insertion-ordered registry; iteration order is the construction order,
// which fixes checkpoint layout and optimizer traversal.
class ParamStore {
 public:
  ParamTensor& add(std::string name, std::size_t rows, std::size_t cols,
                   bool trainable = true) {
    if (index_.count(name))
      throw std::invalid_argument("duplicate parameter name: " + name);
    ParamTensor t;
    t.name = name;
    t.rows = rows;
    t.cols = cols;
    t.trainable = trainable;
    t.v.assign(rows * cols, 0.0f);
    index_.emplace(std::move(name), tensors_.size());
    tensors_.push_back(std::move(t));
    return tensors_.back();
  }

  bool has(std::string_view name) const {
    return index_.count(std::string(name)) != 0;
  }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end())
      throw std::out_of_range("unknown parameter: " + std::string(name));
    return it->second;
  }

  ParamTensor& at(std::string_view name) { return tensors_[index_of(name)]; }
  const ParamTensor& at(std::string_view name) const {
    return tensors_[index_of(name)];
  }

  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  std::size_t count() const { return tensors_.size(); }

 private:
  std::vector<ParamTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ranker
