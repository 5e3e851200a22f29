# Utils - kinex
# Utilitários do sistema (logging, escrita atômica, parsing de argumentos)
