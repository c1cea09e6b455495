#pragma once

#include <stdexcept>
#include <string>

namespace dept {

// Base class of every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Point lies behind (or on) the camera plane; projection undefined.
class NonPositiveDepth : public Error {
public:
    explicit NonPositiveDepth(double z)
        : Error("non-positive camera depth: " + std::to_string(z)) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& msg)
        : Error("dimension mismatch: " + msg) {}
};

class InvalidBox : public Error {
public:
    explicit InvalidBox(const std::string& msg) : Error("invalid box: " + msg) {}
};

class InvalidClass : public Error {
public:
    InvalidClass(int class_id, int n_classes)
        : Error("class id " + std::to_string(class_id) + " out of range [0, " +
                std::to_string(n_classes) + ")"),
          class_id_(class_id) {}
    int class_id() const { return class_id_; }

private:
    int class_id_;
};

// A class with zero samples has an undefined weight under w_k = sqrt(s_m/s_k).
class ZeroCount : public Error {
public:
    explicit ZeroCount(int class_id)
        : Error("class " + std::to_string(class_id) +
                " has zero samples; weight undefined"),
          class_id_(class_id) {}
    int class_id() const { return class_id_; }

private:
    int class_id_;
};

class UnknownClass : public Error {
public:
    explicit UnknownClass(int class_id)
        : Error("class id " + std::to_string(class_id) + " not present in weight table"),
          class_id_(class_id) {}
    int class_id() const { return class_id_; }

private:
    int class_id_;
};

// Malformed input text; line numbers are 1-based.
class ParseError : public Error {
public:
    ParseError(int line, const std::string& msg)
        : Error("parse error at line " + std::to_string(line) + ": " + msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class MissingKey : public Error {
public:
    explicit MissingKey(const std::string& key)
        : Error("missing key: " + key), key_(key) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class TruncatedFile : public Error {
public:
    explicit TruncatedFile(const std::string& msg) : Error("truncated file: " + msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

class CorruptHeader : public Error {
public:
    explicit CorruptHeader(const std::string& msg) : Error("corrupt header: " + msg) {}
};

class DivergenceDetected : public Error {
public:
    explicit DivergenceDetected(const std::string& msg)
        : Error("divergence detected: " + msg) {}
};

}  // namespace dept
